// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace glformer {

// Dense row-major tensor of doubles. Shapes are small vectors of ints;
// rank is anything from 1 to 4 in practice.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v);
    static Tensor scalar(double v);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 4-d accessors assume shape (d0,d1,d2,d3).
    double& at4(int a, int b, int c, int d) {
        return data_[((static_cast<std::int64_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    double at4(int a, int b, int c, int d) const {
        return data_[((static_cast<std::int64_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    void fill(double v);
    double sum() const;
    double abs_max() const;
    double min() const;
    double max() const;
    bool all_finite() const;
    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::int64_t shape_numel(const std::vector<int>& shape);

}  // namespace glformer
