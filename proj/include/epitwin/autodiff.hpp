// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over Tensor values. Ops append a
// node holding the forward value and a closure that pushes the node's
// gradient to its inputs. A tape is single-use: build, backward, read grads.

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "epitwin/tensor.hpp"
#include "epitwin/weights.hpp"

namespace epitwin::nn {

struct Var {
    int id = -1;
};

enum class Activation { Linear, Sigmoid, Tanh, LeakyRelu };

Activation activation_from_string(const std::string& name);
const char* to_string(Activation a);
inline constexpr double kLeakySlope = 0.3;

class Tape {
public:
    Var constant(Tensor value);
    Var variable(Tensor value);
    /// Leaf bound to a store entry by reference (the store must outlive the
    /// tape and stay unmodified while it is in use). Repeated binds of one
    /// name return the same node. With `trainable == false` no gradient is
    /// kept for it.
    Var bind(const WeightStore& store, const std::string& name, bool trainable = true);

    const Tensor& value(Var v) const {
        const Node& n = nodes_[static_cast<std::size_t>(v.id)];
        return n.external ? *n.external : n.value;
    }
    /// Gradient after backward(); zeros of the value shape if none reached it.
    Tensor grad(Var v) const;
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

    /// Seeds d(root)/d(root) = 1; root must hold a single value.
    void backward(Var root);
    /// Gradients of every bound trainable parameter, keyed by store name.
    Gradients parameter_grads() const;

    // Used by op implementations.
    Var push(Tensor value, std::vector<Var> inputs, std::function<void(Tape&, int)> backward);
    Tensor& grad_ref(Var v);
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Tensor grad;
        bool needs_grad = false;
        std::function<void(Tape&, int)> backward;
    };
    std::vector<Node> nodes_;
    std::map<std::string, int> bound_;
    std::map<std::string, bool> bound_trainable_;
};

// Linear algebra ------------------------------------------------------------
/// a [B,K] x w [K,N] -> [B,N]
Var matmul(Tape& t, Var a, Var w);
/// a [B,N] + b [N] broadcast over rows
Var add_bias(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
/// Elementwise product with a constant tensor of the same shape (masks).
Var mul_const(Tape& t, Var a, const Tensor& c);

// Activations ----------------------------------------------------------------
Var sigmoid(Tape& t, Var a);
Var tanh(Tape& t, Var a);
Var leaky_relu(Tape& t, Var a, double slope = kLeakySlope);
Var activate(Tape& t, Var a, Activation act);

// Shape ------------------------------------------------------------------------
Var reshape(Tape& t, Var a, std::vector<int> shape);
/// Columns [start, start+len) of a 2-D view [B, N].
Var slice_cols(Tape& t, Var a, int start, int len);
Var concat_cols(Tape& t, Var a, Var b);

// Normalisation ----------------------------------------------------------------
/// Per-row normalisation of [B, N] with gain/shift of length N.
Var layer_norm(Tape& t, Var a, Var gain, Var shift, double eps = 1.0e-3);
/// Batch statistics per channel over [B, C, spatial...] (or [B, C]). The batch
/// mean/variance are written to `batch_mean` / `batch_var` when non-null.
Var batch_norm_train(Tape& t, Var a, Var gain, Var shift, double eps, std::vector<double>* batch_mean,
                     std::vector<double>* batch_var);
Var batch_norm_infer(Tape& t, Var a, Var gain, Var shift, const Tensor& mean, const Tensor& var, double eps);

// Convolutions -----------------------------------------------------------------
struct Conv2dGeom {
    int kh = 3, kw = 3;
    int sh = 1, sw = 1;
    int ph = 0, pw = 0;
};
/// x [B,Ci,H,W], w [Co,Ci,kh,kw], b [Co] -> [B,Co,Ho,Wo]
Var conv2d(Tape& t, Var x, Var w, Var b, const Conv2dGeom& g);
/// x [B,Ci,H,W], w [Ci,Co,kh,kw], b [Co] -> [B,Co,(H-1)sh-2ph+kh,(W-1)sw-2pw+kw]
Var conv_transpose2d(Tape& t, Var x, Var w, Var b, const Conv2dGeom& g);

// Reductions / losses ------------------------------------------------------------
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
/// mean((a - target)^2)
Var mse(Tape& t, Var a, const Tensor& target);
/// Binary cross entropy of sigmoid(logits) against a constant label,
/// averaged; computed stably from the logits.
Var bce_with_logits(Tape& t, Var logits, double label);

}  // namespace epitwin::nn
