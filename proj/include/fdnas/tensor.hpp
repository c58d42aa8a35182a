// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fdnas {

// Dense n-dimensional array of 64-bit reals with an optional gradient buffer.
// Copies share storage (including the gradient, which is allocated on first
// use); clone() detaches. A tensor is written by one owner at a time -- tapes
// and device updates never share mutable tensors across threads.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape, bool requires_grad = false);

    static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::int64_t> shape, double value);
    static Tensor scalar(double value);
    static Tensor from_data(std::vector<std::int64_t> shape, std::vector<double> data,
                            bool requires_grad = false);

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t numel() const;
    std::int64_t dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    bool defined() const { return static_cast<bool>(storage_); }

    std::span<double> data();
    std::span<const double> data() const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v) { requires_grad_ = v; }

    bool has_grad() const;
    // Allocates a zero grad buffer in the shared storage on first use.
    std::span<double> grad();
    std::span<const double> grad() const;
    void zero_grad();
    void drop_grad();

    // Deep copy of data (grad not copied).
    Tensor clone() const;
    // Shares storage (data and grad) under a new shape with identical numel.
    Tensor reshaped(std::vector<std::int64_t> shape) const;

    double item() const;
    bool all_finite() const;
    bool shares_storage_with(const Tensor& other) const { return storage_ == other.storage_; }

private:
    struct Storage {
        std::vector<double> data;
        std::unique_ptr<std::vector<double>> grad;
    };

    std::vector<std::int64_t> shape_;
    std::shared_ptr<Storage> storage_;
    bool requires_grad_ = false;
};

// Named trainable (or tracked) tensor. Ids are stable paths shared by every
// replica of the same network, so federated aggregation can key on them.
struct Parameter {
    std::string id;
    Tensor value;
    bool trainable = true;
};

std::string shape_str(const std::vector<std::int64_t>& shape);
void require(bool cond, const std::string& message);

}  // namespace fdnas
