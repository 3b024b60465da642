// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/weights.hpp"

#include <cstring>

#include <fmt/format.h>

#include "epitwin/errors.hpp"

namespace epitwin::nn {

Tensor& WeightStore::add(const std::string& name, Tensor value, bool trainable) {
    if (contains(name)) throw ShapeError(fmt::format("weight '{}' already exists", name));
    Entry e;
    e.m = Tensor(value.shape, 0.0);
    e.v = Tensor(value.shape, 0.0);
    e.value = std::move(value);
    e.trainable = trainable;
    order_.push_back(name);
    return entries_.emplace(name, std::move(e)).first->second.value;
}

WeightStore::Entry& WeightStore::entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ShapeError(fmt::format("no weight named '{}' in store '{}'", name, kind));
    return it->second;
}

const WeightStore::Entry& WeightStore::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ShapeError(fmt::format("no weight named '{}' in store '{}'", name, kind));
    return it->second;
}

Tensor& WeightStore::value(const std::string& name) { return entry(name).value; }
const Tensor& WeightStore::value(const std::string& name) const { return entry(name).value; }

std::size_t WeightStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) {
        if (e.trainable) n += e.value.size();
    }
    return n;
}

bool WeightStore::same_values(const WeightStore& other) const {
    if (order_ != other.order_) return false;
    for (const auto& name : order_) {
        const Entry& a = entry(name);
        const Entry& b = other.entry(name);
        if (a.trainable != b.trainable || a.value.shape != b.value.shape) return false;
        if (std::memcmp(a.value.data.data(), b.value.data.data(), a.value.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

}  // namespace epitwin::nn
