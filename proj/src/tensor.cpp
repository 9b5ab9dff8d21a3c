// SPDX-License-Identifier: Apache-2.0
#include "layerparti/tensor.hpp"

#include <algorithm>
#include <atomic>

#include "layerparti/errors.hpp"

LAYERPARTI_BEGIN_NAMESPACE

namespace {

std::atomic<std::uint64_t> next_tensor_id{1};
thread_local bool recording_enabled = true;

}  // namespace

struct Tensor::Storage {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;
    std::uint64_t id = next_tensor_id.fetch_add(1, std::memory_order_relaxed);
};

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_to_string(shape) + " does not hold " + std::to_string(values.size()) +
                             " values");
    }
    auto s = std::make_shared<Storage>();
    s->shape = std::move(shape);
    s->data = std::move(values);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::uint64_t Tensor::id() const noexcept { return s_ ? s_->id : 0; }

const Shape& Tensor::shape() const { return s_->shape; }

std::size_t Tensor::dim(int i) const {
    const auto r = static_cast<int>(s_->shape.size());
    const int idx = i < 0 ? r + i : i;
    if (idx < 0 || idx >= r) throw UsageError("dimension index out of range for " + shape_to_string(s_->shape));
    return s_->shape[static_cast<std::size_t>(idx)];
}

std::size_t Tensor::numel() const { return s_->data.size(); }

std::span<Real> Tensor::data() { return s_->data; }
std::span<const Real> Tensor::data() const { return s_->data; }

Real Tensor::item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_to_string(shape()));
    return s_->data[0];
}

bool Tensor::requires_grad() const { return s_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    s_->requires_grad = flag;
    if (!flag) drop_grad();
}

bool Tensor::has_grad() const { return !s_->grad.empty(); }
std::span<Real> Tensor::grad() { return s_->grad; }
std::span<const Real> Tensor::grad() const { return s_->grad; }

std::span<Real> Tensor::ensure_grad() const {
    if (!s_->requires_grad) throw InvariantError("gradient requested for a tensor without requires_grad");
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0f);
    return s_->grad;
}

void Tensor::zero_grad() { std::fill(s_->grad.begin(), s_->grad.end(), 0.0f); }

void Tensor::drop_grad() {
    s_->grad.clear();
    s_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return from(s_->shape, s_->data, false); }

Tensor Tensor::clone() const {
    Tensor t = from(s_->shape, s_->data, s_->requires_grad);
    t.s_->grad = s_->grad;
    return t;
}

Tape& Tape::active() {
    thread_local Tape tape;
    return tape;
}

void Tape::record(std::string op, std::vector<Tensor> grad_inputs, Tensor output,
                  std::function<void(std::span<const Real>)> fn) {
    entries_.push_back(TapeEntry{std::move(op), std::move(grad_inputs), std::move(output), std::move(fn)});
}

bool Tape::produced(const Tensor& t) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const TapeEntry& e) { return e.output.id() == t.id(); });
}

bool grad_enabled() noexcept { return recording_enabled; }

NoGradGuard::NoGradGuard() : previous_(recording_enabled) { recording_enabled = false; }
NoGradGuard::~NoGradGuard() { recording_enabled = previous_; }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw UsageError("backward() needs a scalar loss, got " +
                         (loss.defined() ? shape_to_string(loss.shape()) : std::string("undefined tensor")));
    }
    Tape& tape = Tape::active();
    if (!tape.produced(loss)) throw UsageError("backward(): loss was not produced by a recorded operation");

    Tensor root = loss;
    root.ensure_grad()[0] += 1.0f;
    for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
        if (!it->output.has_grad()) continue;  // not on a path to the loss
        const Tensor& out = it->output;
        it->backward(out.grad());
    }
    tape.clear();
}

LAYERPARTI_END_NAMESPACE
