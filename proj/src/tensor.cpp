// SPDX-License-Identifier: Apache-2.0
#include "fdnas/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fdnas {

namespace {

std::int64_t product(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw std::invalid_argument("tensor shape has negative dimension");
        n *= d;
    }
    return n;
}

}  // namespace

void require(bool cond, const std::string& message) {
    if (!cond) throw std::invalid_argument(message);
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<std::int64_t> shape, bool requires_grad)
    : shape_(std::move(shape)), storage_(std::make_shared<Storage>()), requires_grad_(requires_grad) {
    storage_->data.assign(static_cast<std::size_t>(product(shape_)), 0.0);
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
    Tensor t(std::move(shape));
    for (auto& v : t.storage_->data) v = value;
    return t;
}

Tensor Tensor::scalar(double value) {
    Tensor t(std::vector<std::int64_t>{1});
    t.storage_->data[0] = value;
    return t;
}

Tensor Tensor::from_data(std::vector<std::int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
    require(product(shape) == static_cast<std::int64_t>(data.size()),
            "from_data: shape " + shape_str(shape) + " does not match data length " +
                std::to_string(data.size()));
    Tensor t;
    t.shape_ = std::move(shape);
    t.storage_ = std::make_shared<Storage>();
    t.storage_->data = std::move(data);
    t.requires_grad_ = requires_grad;
    return t;
}

std::int64_t Tensor::numel() const {
    return storage_ ? static_cast<std::int64_t>(storage_->data.size()) : 0;
}

std::span<double> Tensor::data() {
    require(defined(), "tensor is undefined");
    return {storage_->data.data(), storage_->data.size()};
}

std::span<const double> Tensor::data() const {
    require(defined(), "tensor is undefined");
    return {storage_->data.data(), storage_->data.size()};
}

bool Tensor::has_grad() const { return storage_ && storage_->grad != nullptr; }

std::span<double> Tensor::grad() {
    require(defined(), "tensor is undefined");
    if (!storage_->grad) {
        storage_->grad = std::make_unique<std::vector<double>>(storage_->data.size(), 0.0);
    }
    return {storage_->grad->data(), storage_->grad->size()};
}

std::span<const double> Tensor::grad() const {
    require(has_grad(), "tensor has no gradient buffer");
    return {storage_->grad->data(), storage_->grad->size()};
}

void Tensor::zero_grad() {
    if (has_grad()) {
        for (auto& v : *storage_->grad) v = 0.0;
    }
}

void Tensor::drop_grad() {
    if (storage_) storage_->grad.reset();
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape_ = shape_;
    if (storage_) {
        t.storage_ = std::make_shared<Storage>();
        t.storage_->data = storage_->data;
    }
    t.requires_grad_ = requires_grad_;
    return t;
}

Tensor Tensor::reshaped(std::vector<std::int64_t> shape) const {
    require(product(shape) == numel(), "reshape: numel mismatch, " + shape_str(shape_) +
                                           " -> " + shape_str(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

double Tensor::item() const {
    require(numel() == 1, "item: tensor is not scalar, shape " + shape_str(shape_));
    return storage_->data[0];
}

bool Tensor::all_finite() const {
    for (double v : storage_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace fdnas
