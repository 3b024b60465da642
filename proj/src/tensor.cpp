// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/tensor.hpp"

#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "epitwin/errors.hpp"

namespace epitwin::nn {

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const std::vector<int>& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

Tensor::Tensor(std::vector<int> dims, double fill) : shape(std::move(dims)), data(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<int> dims, std::vector<double> values) : shape(std::move(dims)), data(std::move(values)) {
    if (data.size() != shape_size(shape)) {
        throw ShapeError(fmt::format("tensor shape {} needs {} values, got {}", shape_string(shape), shape_size(shape), data.size()));
    }
}

MatrixMap Tensor::matrix() {
    const Eigen::Index rows = shape.empty() ? 1 : shape[0];
    const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(data.size()) / rows;
    return MatrixMap(data.data(), rows, cols);
}

ConstMatrixMap Tensor::matrix() const {
    const Eigen::Index rows = shape.empty() ? 1 : shape[0];
    const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(data.size()) / rows;
    return ConstMatrixMap(data.data(), rows, cols);
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace epitwin::nn
