// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/autodiff.hpp"

#include <cmath>
#include <memory>

#include <fmt/format.h>

#include "epitwin/errors.hpp"

namespace epitwin::nn {

Activation activation_from_string(const std::string& name) {
    if (name == "linear") return Activation::Linear;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "tanh") return Activation::Tanh;
    if (name == "leaky_relu") return Activation::LeakyRelu;
    throw DomainError(fmt::format("unknown activation '{}'", name));
}

const char* to_string(Activation a) {
    switch (a) {
        case Activation::Linear: return "linear";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Tanh: return "tanh";
        case Activation::LeakyRelu: return "leaky_relu";
    }
    return "?";
}

// -----------------------------------------------------------------------------

Var Tape::push(Tensor value, std::vector<Var> inputs, std::function<void(Tape&, int)> backward) {
    Node n;
    n.value = std::move(value);
    for (Var v : inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(v.id)].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::bind(const WeightStore& store, const std::string& name, bool trainable) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return Var{it->second};
    const bool grad = trainable && store.entry(name).trainable;
    Node n;
    n.external = &store.value(name);
    n.needs_grad = grad;
    nodes_.push_back(std::move(n));
    const Var v{static_cast<int>(nodes_.size()) - 1};
    bound_[name] = v.id;
    bound_trainable_[name] = grad;
    return v;
}

Tensor& Tape::grad_ref(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    const Tensor& val = n.external ? *n.external : n.value;
    if (n.grad.empty() && !val.empty()) n.grad = Tensor(val.shape, 0.0);
    return n.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.empty()) return Tensor(value(v).shape, 0.0);
    return n.grad;
}

void Tape::backward(Var root) {
    if (value(root).size() != 1) throw ShapeError("backward: root must be a scalar");
    grad_ref(root)[0] = 1.0;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.backward && !n.grad.empty()) n.backward(*this, id);
    }
}

Gradients Tape::parameter_grads() const {
    Gradients g;
    for (const auto& [name, id] : bound_) {
        if (bound_trainable_.at(name)) g[name] = grad(Var{id});
    }
    return g;
}

// -----------------------------------------------------------------------------

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) {
        throw ShapeError(fmt::format("{}: shapes {} and {} differ", op, shape_string(a.shape), shape_string(b.shape)));
    }
}

int rows_of(const Tensor& a) { return a.shape.empty() ? 1 : a.shape[0]; }
int cols_of(const Tensor& a) {
    const int r = rows_of(a);
    return r == 0 ? 0 : static_cast<int>(a.size()) / r;
}

template <class F>
Var unary(Tape& t, Var a, F f, std::function<void(Tape&, int)> bw) {
    Tensor out = t.value(a);
    for (double& v : out.data) v = f(v);
    return t.push(std::move(out), {a}, std::move(bw));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Var matmul(Tape& t, Var a, Var w) {
    const Tensor& av = t.value(a);
    const Tensor& wv = t.value(w);
    if (wv.rank() != 2 || cols_of(av) != wv.dim(0)) {
        throw ShapeError(fmt::format("matmul: {} x {} does not compose", shape_string(av.shape), shape_string(wv.shape)));
    }
    Tensor out({rows_of(av), wv.dim(1)});
    out.matrix().noalias() = av.matrix() * wv.matrix();
    return t.push(std::move(out), {a, w}, [a, w](Tape& t, int id) {
        const auto g = t.grad_ref(Var{id}).matrix();
        if (t.needs_grad(a)) t.grad_ref(a).matrix().noalias() += g * t.value(w).matrix().transpose();
        if (t.needs_grad(w)) t.grad_ref(w).matrix().noalias() += t.value(a).matrix().transpose() * g;
    });
}

Var add_bias(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (static_cast<int>(bv.size()) != cols_of(av)) {
        throw ShapeError(fmt::format("add_bias: bias {} vs input {}", shape_string(bv.shape), shape_string(av.shape)));
    }
    Tensor out = av;
    out.matrix().rowwise() += ConstMatrixMap(bv.data.data(), 1, static_cast<Eigen::Index>(bv.size())).row(0);
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, int id) {
        const Tensor& g = t.grad_ref(Var{id});
        if (t.needs_grad(a)) t.grad_ref(a).matrix() += g.matrix();
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            MatrixMap(gb.data.data(), 1, static_cast<Eigen::Index>(gb.size())) += g.matrix().colwise().sum();
        }
    });
}

Var add(Tape& t, Var a, Var b) {
    require_same(t.value(a), t.value(b), "add");
    Tensor out = t.value(a);
    const Tensor& bv = t.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, int id) {
        const Tensor& g = t.grad_ref(Var{id});
        for (Var v : {a, b}) {
            if (!t.needs_grad(v)) continue;
            Tensor& gv = t.grad_ref(v);
            for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
        }
    });
}

Var sub(Tape& t, Var a, Var b) {
    require_same(t.value(a), t.value(b), "sub");
    Tensor out = t.value(a);
    const Tensor& bv = t.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, int id) {
        const Tensor& g = t.grad_ref(Var{id});
        if (t.needs_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(Tape& t, Var a, Var b) {
    require_same(t.value(a), t.value(b), "mul");
    Tensor out = t.value(a);
    const Tensor& bv = t.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, int id) {
        const Tensor& g = t.grad_ref(Var{id});
        if (t.needs_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            const Tensor& bv = t.value(b);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            const Tensor& av = t.value(a);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var scale(Tape& t, Var a, double s) {
    return unary(t, a, [s](double x) { return s * x; }, [a, s](Tape& t, int id) {
        const Tensor& g = t.grad_ref(Var{id});
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

Var mul_const(Tape& t, Var a, const Tensor& c) {
    require_same(t.value(a), c, "mul_const");
    Tensor out = t.value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
    return t.push(std::move(out), {a}, [a, c](Tape& t, int id) {
        const Tensor& g = t.grad_ref(Var{id});
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
    });
}

// -----------------------------------------------------------------------------

Var sigmoid(Tape& t, Var a) {
    return unary(t, a, stable_sigmoid, [a](Tape& t, int id) {
        const Tensor& g = t.grad_ref(Var{id});
        const Tensor& y = t.value(Var{id});
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var tanh(Tape& t, Var a) {
    return unary(t, a, [](double x) { return std::tanh(x); }, [a](Tape& t, int id) {
        const Tensor& g = t.grad_ref(Var{id});
        const Tensor& y = t.value(Var{id});
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

Var leaky_relu(Tape& t, Var a, double slope) {
    return unary(t, a, [slope](double x) { return x > 0.0 ? x : slope * x; }, [a, slope](Tape& t, int id) {
        const Tensor& g = t.grad_ref(Var{id});
        const Tensor& x = t.value(a);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : slope * g[i];
    });
}

Var activate(Tape& t, Var a, Activation act) {
    switch (act) {
        case Activation::Linear: return a;
        case Activation::Sigmoid: return sigmoid(t, a);
        case Activation::Tanh: return tanh(t, a);
        case Activation::LeakyRelu: return leaky_relu(t, a);
    }
    throw DomainError("activate: unknown activation");
}

// -----------------------------------------------------------------------------

Var reshape(Tape& t, Var a, std::vector<int> shape) {
    if (shape_size(shape) != t.value(a).size()) {
        throw ShapeError(fmt::format("reshape: {} to {}", shape_string(t.value(a).shape), shape_string(shape)));
    }
    Tensor out(std::move(shape), t.value(a).data);
    return t.push(std::move(out), {a}, [a](Tape& t, int id) {
        const Tensor& g = t.grad_ref(Var{id});
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var slice_cols(Tape& t, Var a, int start, int len) {
    const Tensor& av = t.value(a);
    const int rows = rows_of(av), cols = cols_of(av);
    if (start < 0 || len < 0 || start + len > cols) throw ShapeError("slice_cols: range out of bounds");
    Tensor out({rows, len});
    out.matrix() = av.matrix().middleCols(start, len);
    return t.push(std::move(out), {a}, [a, start, len](Tape& t, int id) {
        t.grad_ref(a).matrix().middleCols(start, len) += t.grad_ref(Var{id}).matrix();
    });
}

Var concat_cols(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (rows_of(av) != rows_of(bv)) throw ShapeError("concat_cols: row counts differ");
    const int ca = cols_of(av), cb = cols_of(bv);
    Tensor out({rows_of(av), ca + cb});
    out.matrix().leftCols(ca) = av.matrix();
    out.matrix().rightCols(cb) = bv.matrix();
    return t.push(std::move(out), {a, b}, [a, b, ca, cb](Tape& t, int id) {
        const auto g = t.grad_ref(Var{id}).matrix();
        if (t.needs_grad(a)) t.grad_ref(a).matrix() += g.leftCols(ca);
        if (t.needs_grad(b)) t.grad_ref(b).matrix() += g.rightCols(cb);
    });
}

// -----------------------------------------------------------------------------

Var layer_norm(Tape& t, Var a, Var gain, Var shift, double eps) {
    const Tensor& x = t.value(a);
    const int rows = rows_of(x), n = cols_of(x);
    if (static_cast<int>(t.value(gain).size()) != n || static_cast<int>(t.value(shift).size()) != n) {
        throw ShapeError("layer_norm: gain/shift length must equal the feature count");
    }
    const Tensor& gv = t.value(gain);
    const Tensor& sv = t.value(shift);
    Tensor out(x.shape);
    std::vector<double> xhat(x.size()), inv_std(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + static_cast<std::size_t>(r) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += xr[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = is;
        for (int j = 0; j < n; ++j) {
            const std::size_t k = static_cast<std::size_t>(r) * n + j;
            xhat[k] = (xr[j] - mu) * is;
            out[k] = xhat[k] * gv[static_cast<std::size_t>(j)] + sv[static_cast<std::size_t>(j)];
        }
    }
    return t.push(std::move(out), {a, gain, shift},
                  [a, gain, shift, rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int id) {
                      const Tensor& g = t.grad_ref(Var{id});
                      const Tensor& gv = t.value(gain);
                      if (t.needs_grad(gain) || t.needs_grad(shift)) {
                          Tensor& gg = t.grad_ref(gain);
                          Tensor& gs = t.grad_ref(shift);
                          for (int r = 0; r < rows; ++r) {
                              for (int j = 0; j < n; ++j) {
                                  const std::size_t k = static_cast<std::size_t>(r) * n + j;
                                  gg[static_cast<std::size_t>(j)] += g[k] * xhat[k];
                                  gs[static_cast<std::size_t>(j)] += g[k];
                              }
                          }
                      }
                      if (!t.needs_grad(a)) return;
                      Tensor& ga = t.grad_ref(a);
                      for (int r = 0; r < rows; ++r) {
                          double m1 = 0.0, m2 = 0.0;
                          for (int j = 0; j < n; ++j) {
                              const std::size_t k = static_cast<std::size_t>(r) * n + j;
                              const double d = g[k] * gv[static_cast<std::size_t>(j)];
                              m1 += d;
                              m2 += d * xhat[k];
                          }
                          m1 /= n;
                          m2 /= n;
                          for (int j = 0; j < n; ++j) {
                              const std::size_t k = static_cast<std::size_t>(r) * n + j;
                              const double d = g[k] * gv[static_cast<std::size_t>(j)];
                              ga[k] += inv_std[static_cast<std::size_t>(r)] * (d - m1 - xhat[k] * m2);
                          }
                      }
                  });
}

namespace {

struct ChannelLayout {
    int batch, channels, spatial;
};

ChannelLayout channel_layout(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("batch_norm: input needs at least [B, C]");
    const int b = x.dim(0), c = x.dim(1);
    return {b, c, static_cast<int>(x.size()) / (b * c)};
}

}  // namespace

Var batch_norm_train(Tape& t, Var a, Var gain, Var shift, double eps, std::vector<double>* batch_mean,
                     std::vector<double>* batch_var) {
    const Tensor& x = t.value(a);
    const ChannelLayout L = channel_layout(x);
    if (static_cast<int>(t.value(gain).size()) != L.channels || static_cast<int>(t.value(shift).size()) != L.channels) {
        throw ShapeError("batch_norm: gain/shift length must equal the channel count");
    }
    const Tensor& gv = t.value(gain);
    const Tensor& sv = t.value(shift);
    const double count = static_cast<double>(L.batch) * L.spatial;
    std::vector<double> mu(static_cast<std::size_t>(L.channels), 0.0), var(mu.size(), 0.0), inv_std(mu.size());
    auto at = [&](int b, int c, int s) { return (static_cast<std::size_t>(b) * L.channels + c) * L.spatial + s; };
    for (int b = 0; b < L.batch; ++b)
        for (int c = 0; c < L.channels; ++c)
            for (int s = 0; s < L.spatial; ++s) mu[static_cast<std::size_t>(c)] += x[at(b, c, s)];
    for (double& m : mu) m /= count;
    for (int b = 0; b < L.batch; ++b)
        for (int c = 0; c < L.channels; ++c)
            for (int s = 0; s < L.spatial; ++s) {
                const double d = x[at(b, c, s)] - mu[static_cast<std::size_t>(c)];
                var[static_cast<std::size_t>(c)] += d * d;
            }
    for (std::size_t c = 0; c < var.size(); ++c) {
        var[c] /= count;
        inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    }
    if (batch_mean) *batch_mean = mu;
    if (batch_var) *batch_var = var;

    Tensor out(x.shape);
    std::vector<double> xhat(x.size());
    for (int b = 0; b < L.batch; ++b)
        for (int c = 0; c < L.channels; ++c)
            for (int s = 0; s < L.spatial; ++s) {
                const std::size_t k = at(b, c, s);
                const auto cc = static_cast<std::size_t>(c);
                xhat[k] = (x[k] - mu[cc]) * inv_std[cc];
                out[k] = xhat[k] * gv[cc] + sv[cc];
            }
    return t.push(std::move(out), {a, gain, shift},
                  [a, gain, shift, L, count, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int id) {
                      const Tensor& g = t.grad_ref(Var{id});
                      const Tensor& gv = t.value(gain);
                      auto at = [&](int b, int c, int s) { return (static_cast<std::size_t>(b) * L.channels + c) * L.spatial + s; };
                      std::vector<double> sum_g(static_cast<std::size_t>(L.channels), 0.0), sum_gx(sum_g.size(), 0.0);
                      for (int b = 0; b < L.batch; ++b)
                          for (int c = 0; c < L.channels; ++c)
                              for (int s = 0; s < L.spatial; ++s) {
                                  const std::size_t k = at(b, c, s);
                                  sum_g[static_cast<std::size_t>(c)] += g[k];
                                  sum_gx[static_cast<std::size_t>(c)] += g[k] * xhat[k];
                              }
                      if (t.needs_grad(gain)) {
                          Tensor& gg = t.grad_ref(gain);
                          for (std::size_t c = 0; c < sum_gx.size(); ++c) gg[c] += sum_gx[c];
                      }
                      if (t.needs_grad(shift)) {
                          Tensor& gs = t.grad_ref(shift);
                          for (std::size_t c = 0; c < sum_g.size(); ++c) gs[c] += sum_g[c];
                      }
                      if (!t.needs_grad(a)) return;
                      Tensor& ga = t.grad_ref(a);
                      for (int b = 0; b < L.batch; ++b)
                          for (int c = 0; c < L.channels; ++c) {
                              const auto cc = static_cast<std::size_t>(c);
                              const double m1 = sum_g[cc] / count, m2 = sum_gx[cc] / count;
                              for (int s = 0; s < L.spatial; ++s) {
                                  const std::size_t k = at(b, c, s);
                                  ga[k] += gv[cc] * inv_std[cc] * (g[k] - m1 - xhat[k] * m2);
                              }
                          }
                  });
}

Var batch_norm_infer(Tape& t, Var a, Var gain, Var shift, const Tensor& mean, const Tensor& var, double eps) {
    const Tensor& x = t.value(a);
    const ChannelLayout L = channel_layout(x);
    if (static_cast<int>(mean.size()) != L.channels || static_cast<int>(var.size()) != L.channels) {
        throw ShapeError("batch_norm: running statistics do not match the channel count");
    }
    const Tensor& gv = t.value(gain);
    const Tensor& sv = t.value(shift);
    std::vector<double> inv_std(static_cast<std::size_t>(L.channels));
    for (std::size_t c = 0; c < inv_std.size(); ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    Tensor out(x.shape);
    std::vector<double> xhat(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const auto c = (k / static_cast<std::size_t>(L.spatial)) % static_cast<std::size_t>(L.channels);
        xhat[k] = (x[k] - mean[c]) * inv_std[c];
        out[k] = xhat[k] * gv[c] + sv[c];
    }
    return t.push(std::move(out), {a, gain, shift},
                  [a, gain, shift, L, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int id) {
                      const Tensor& g = t.grad_ref(Var{id});
                      const Tensor& gv = t.value(gain);
                      const bool ga_on = t.needs_grad(a), gg_on = t.needs_grad(gain), gs_on = t.needs_grad(shift);
                      for (std::size_t k = 0; k < g.size(); ++k) {
                          const auto c = (k / static_cast<std::size_t>(L.spatial)) % static_cast<std::size_t>(L.channels);
                          if (ga_on) t.grad_ref(a)[k] += g[k] * gv[c] * inv_std[c];
                          if (gg_on) t.grad_ref(gain)[c] += g[k] * xhat[k];
                          if (gs_on) t.grad_ref(shift)[c] += g[k];
                      }
                  });
}

// -----------------------------------------------------------------------------

namespace {

/// col [C*kh*kw, B*Ho*Wo] from x [B,C,H,W].
void im2col(const double* x, int batch, int ch, int h, int w, const Conv2dGeom& g, int ho, int wo, double* col) {
    const std::size_t p_total = static_cast<std::size_t>(batch) * ho * wo;
    for (int c = 0; c < ch; ++c)
        for (int ki = 0; ki < g.kh; ++ki)
            for (int kj = 0; kj < g.kw; ++kj) {
                double* row = col + (static_cast<std::size_t>(c * g.kh + ki) * g.kw + kj) * p_total;
                for (int b = 0; b < batch; ++b) {
                    const double* xb = x + (static_cast<std::size_t>(b) * ch + c) * h * w;
                    for (int oi = 0; oi < ho; ++oi) {
                        const int ii = oi * g.sh - g.ph + ki;
                        for (int oj = 0; oj < wo; ++oj) {
                            const int jj = oj * g.sw - g.pw + kj;
                            const std::size_t p = (static_cast<std::size_t>(b) * ho + oi) * wo + oj;
                            row[p] = (ii >= 0 && ii < h && jj >= 0 && jj < w) ? xb[ii * w + jj] : 0.0;
                        }
                    }
                }
            }
}

/// Adjoint of im2col: accumulates col into x.
void col2im(const double* col, int batch, int ch, int h, int w, const Conv2dGeom& g, int ho, int wo, double* x) {
    const std::size_t p_total = static_cast<std::size_t>(batch) * ho * wo;
    for (int c = 0; c < ch; ++c)
        for (int ki = 0; ki < g.kh; ++ki)
            for (int kj = 0; kj < g.kw; ++kj) {
                const double* row = col + (static_cast<std::size_t>(c * g.kh + ki) * g.kw + kj) * p_total;
                for (int b = 0; b < batch; ++b) {
                    double* xb = x + (static_cast<std::size_t>(b) * ch + c) * h * w;
                    for (int oi = 0; oi < ho; ++oi) {
                        const int ii = oi * g.sh - g.ph + ki;
                        if (ii < 0 || ii >= h) continue;
                        for (int oj = 0; oj < wo; ++oj) {
                            const int jj = oj * g.sw - g.pw + kj;
                            if (jj < 0 || jj >= w) continue;
                            xb[ii * w + jj] += row[(static_cast<std::size_t>(b) * ho + oi) * wo + oj];
                        }
                    }
                }
            }
}

/// [C, B*S] channel-major matrix <-> [B, C, S] tensor layout.
void to_channel_major(const double* x, int batch, int ch, int spatial, double* out) {
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < ch; ++c)
            for (int s = 0; s < spatial; ++s)
                out[static_cast<std::size_t>(c) * batch * spatial + static_cast<std::size_t>(b) * spatial + s] =
                    x[(static_cast<std::size_t>(b) * ch + c) * spatial + s];
}

void from_channel_major(const double* in, int batch, int ch, int spatial, double* x, bool accumulate) {
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < ch; ++c)
            for (int s = 0; s < spatial; ++s) {
                double& dst = x[(static_cast<std::size_t>(b) * ch + c) * spatial + s];
                const double v = in[static_cast<std::size_t>(c) * batch * spatial + static_cast<std::size_t>(b) * spatial + s];
                dst = accumulate ? dst + v : v;
            }
}

}  // namespace

Var conv2d(Tape& t, Var x, Var w, Var b, const Conv2dGeom& g) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != g.kh || wv.dim(3) != g.kw ||
        static_cast<int>(t.value(b).size()) != wv.dim(0)) {
        throw ShapeError(fmt::format("conv2d: input {} weight {}", shape_string(xv.shape), shape_string(wv.shape)));
    }
    const int batch = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3), co = wv.dim(0);
    const int ho = (h + 2 * g.ph - g.kh) / g.sh + 1;
    const int wo = (wd + 2 * g.pw - g.kw) / g.sw + 1;
    if (ho < 1 || wo < 1) throw ShapeError("conv2d: output would be empty");
    const int k = ci * g.kh * g.kw;
    const int p = batch * ho * wo;

    auto col = std::make_shared<RowMatrix>(k, p);
    im2col(xv.data.data(), batch, ci, h, wd, g, ho, wo, col->data());
    RowMatrix out_cm = ConstMatrixMap(wv.data.data(), co, k) * (*col);
    const Tensor& bv = t.value(b);
    for (int c = 0; c < co; ++c) out_cm.row(c).array() += bv[static_cast<std::size_t>(c)];
    Tensor out({batch, co, ho, wo});
    from_channel_major(out_cm.data(), batch, co, ho * wo, out.data.data(), false);

    return t.push(std::move(out), {x, w, b}, [x, w, b, g, batch, ci, h, wd, co, ho, wo, k, p, col](Tape& t, int id) {
        const Tensor& gout = t.grad_ref(Var{id});
        RowMatrix g_cm(co, p);
        to_channel_major(gout.data.data(), batch, co, ho * wo, g_cm.data());
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (int c = 0; c < co; ++c) gb[static_cast<std::size_t>(c)] += g_cm.row(c).sum();
        }
        if (t.needs_grad(w)) MatrixMap(t.grad_ref(w).data.data(), co, k).noalias() += g_cm * col->transpose();
        if (t.needs_grad(x)) {
            RowMatrix gcol = ConstMatrixMap(t.value(w).data.data(), co, k).transpose() * g_cm;
            col2im(gcol.data(), batch, ci, h, wd, g, ho, wo, t.grad_ref(x).data.data());
        }
    });
}

Var conv_transpose2d(Tape& t, Var x, Var w, Var b, const Conv2dGeom& g) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(0) != xv.dim(1) || wv.dim(2) != g.kh || wv.dim(3) != g.kw ||
        static_cast<int>(t.value(b).size()) != wv.dim(1)) {
        throw ShapeError(fmt::format("conv_transpose2d: input {} weight {}", shape_string(xv.shape), shape_string(wv.shape)));
    }
    const int batch = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3), co = wv.dim(1);
    const int ho = (h - 1) * g.sh - 2 * g.ph + g.kh;
    const int wo = (wd - 1) * g.sw - 2 * g.pw + g.kw;
    if (ho < 1 || wo < 1) throw ShapeError("conv_transpose2d: output would be empty");
    // The input plays the role of a conv2d output over the [Co, Ho, Wo] image.
    if ((ho + 2 * g.ph - g.kh) / g.sh + 1 != h || (wo + 2 * g.pw - g.kw) / g.sw + 1 != wd) {
        throw ShapeError("conv_transpose2d: geometry is not invertible");
    }
    const int k = co * g.kh * g.kw;
    const int p = batch * h * wd;

    auto x_cm = std::make_shared<RowMatrix>(ci, p);
    to_channel_major(xv.data.data(), batch, ci, h * wd, x_cm->data());
    const RowMatrix col = ConstMatrixMap(wv.data.data(), ci, k).transpose() * (*x_cm);
    Tensor out({batch, co, ho, wo});
    col2im(col.data(), batch, co, ho, wo, g, h, wd, out.data.data());
    const Tensor& bv = t.value(b);
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    for (int bb = 0; bb < batch; ++bb)
        for (int c = 0; c < co; ++c) {
            double* dst = out.data.data() + (static_cast<std::size_t>(bb) * co + c) * plane;
            for (std::size_t s = 0; s < plane; ++s) dst[s] += bv[static_cast<std::size_t>(c)];
        }

    return t.push(std::move(out), {x, w, b}, [x, w, b, g, batch, ci, h, wd, co, ho, wo, k, p, x_cm](Tape& t, int id) {
        const Tensor& gout = t.grad_ref(Var{id});
        const std::size_t plane = static_cast<std::size_t>(ho) * wo;
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (int bb = 0; bb < batch; ++bb)
                for (int c = 0; c < co; ++c) {
                    const double* src = gout.data.data() + (static_cast<std::size_t>(bb) * co + c) * plane;
                    double s = 0.0;
                    for (std::size_t q = 0; q < plane; ++q) s += src[q];
                    gb[static_cast<std::size_t>(c)] += s;
                }
        }
        if (!t.needs_grad(w) && !t.needs_grad(x)) return;
        RowMatrix gcol(k, p);
        im2col(gout.data.data(), batch, co, ho, wo, g, h, wd, gcol.data());
        if (t.needs_grad(w)) MatrixMap(t.grad_ref(w).data.data(), ci, k).noalias() += (*x_cm) * gcol.transpose();
        if (t.needs_grad(x)) {
            const RowMatrix gx_cm = ConstMatrixMap(t.value(w).data.data(), ci, k) * gcol;
            from_channel_major(gx_cm.data(), batch, ci, h * wd, t.grad_ref(x).data.data(), true);
        }
    });
}

// -----------------------------------------------------------------------------

Var sum(Tape& t, Var a) {
    double s = 0.0;
    for (double v : t.value(a).data) s += v;
    return t.push(Tensor({1}, s), {a}, [a](Tape& t, int id) {
        const double g = t.grad_ref(Var{id})[0];
        for (double& v : t.grad_ref(a).data) v += g;
    });
}

Var mean(Tape& t, Var a) {
    const double n = static_cast<double>(t.value(a).size());
    if (n == 0.0) throw ShapeError("mean: empty tensor");
    return scale(t, sum(t, a), 1.0 / n);
}

Var mse(Tape& t, Var a, const Tensor& target) {
    const Tensor& av = t.value(a);
    require_same(av, target, "mse");
    const double n = static_cast<double>(av.size());
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - target[i]) * (av[i] - target[i]);
    return t.push(Tensor({1}, s / n), {a}, [a, target, n](Tape& t, int id) {
        const double g = t.grad_ref(Var{id})[0];
        const Tensor& av = t.value(a);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * 2.0 * (av[i] - target[i]) / n;
    });
}

Var bce_with_logits(Tape& t, Var logits, double label) {
    const Tensor& l = t.value(logits);
    const double n = static_cast<double>(l.size());
    double s = 0.0;
    for (double x : l.data) s += label * softplus(-x) + (1.0 - label) * softplus(x);
    return t.push(Tensor({1}, s / n), {logits}, [logits, label, n](Tape& t, int id) {
        const double g = t.grad_ref(Var{id})[0];
        const Tensor& l = t.value(logits);
        Tensor& gl = t.grad_ref(logits);
        for (std::size_t i = 0; i < l.size(); ++i) gl[i] += g * (stable_sigmoid(l[i]) - label) / n;
    });
}

}  // namespace epitwin::nn
