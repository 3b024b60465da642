// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "epitwin/tensor.hpp"

namespace epitwin::nn {

/// Named parameter tensors plus Adam/Nadam moments. Non-trainable entries
/// (batch-norm running statistics, scalers) live here too so a checkpoint is
/// self-contained; the optimizer skips them.
class WeightStore {
public:
    struct Entry {
        Tensor value;
        Tensor m;  ///< first moment
        Tensor v;  ///< second moment
        bool trainable = true;
    };

    std::string kind;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
    /// Free-form string metadata carried into checkpoints.
    std::map<std::string, std::string> meta;

    /// Throws ShapeError on a duplicate name.
    Tensor& add(const std::string& name, Tensor value, bool trainable = true);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    std::size_t parameter_count() const;

    /// Bitwise equality of names, values and trainable flags.
    bool same_values(const WeightStore& other) const;

private:
    std::vector<std::string> order_;
    std::map<std::string, Entry> entries_;
};

using Gradients = std::map<std::string, Tensor>;

}  // namespace epitwin::nn
