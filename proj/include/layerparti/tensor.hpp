// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "layerparti/real.hpp"

LAYERPARTI_BEGIN_NAMESPACE

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Shared handle to a dense row-major buffer of Real. Copies of a Tensor alias
/// the same storage (parameters are referenced from both the store and the
/// tape); use clone() for an independent copy.
///
/// The gradient buffer is allocated lazily by backward() and only for tensors
/// with requires_grad set. Clearing requires_grad releases the buffer.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
    static Tensor scalar(Real value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(s_); }
    std::uint64_t id() const noexcept;

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    /// Size of dimension i; negative i counts from the back.
    std::size_t dim(int i) const;
    std::size_t numel() const;

    std::span<Real> data();
    std::span<const Real> data() const;
    Real item() const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);

    bool has_grad() const;
    std::span<Real> grad();
    std::span<const Real> grad() const;
    /// Gradient buffer, allocated (zero-filled) on first use.
    std::span<Real> ensure_grad() const;
    /// Zero-fills an existing gradient buffer; no allocation.
    void zero_grad();
    /// Releases the gradient buffer.
    void drop_grad();

    /// Independent copy of the values, not connected to any tape.
    Tensor detach() const;
    Tensor clone() const;

  private:
    struct Storage;
    explicit Tensor(std::shared_ptr<Storage> s) : s_(std::move(s)) {}
    std::shared_ptr<Storage> s_;
};

/// One recorded operation. `grad_inputs` lists exactly the inputs that the
/// backward closure writes gradient into.
struct TapeEntry {
    std::string op;
    std::vector<Tensor> grad_inputs;
    Tensor output;
    std::function<void(std::span<const Real> output_grad)> backward;
};

/// Record of executed differentiable operations on the current thread.
class Tape {
  public:
    static Tape& active();

    void record(std::string op, std::vector<Tensor> grad_inputs, Tensor output,
                std::function<void(std::span<const Real>)> backward);

    const std::vector<TapeEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    bool produced(const Tensor& t) const;

    /// Releases every saved activation.
    void clear() noexcept { entries_.clear(); }

  private:
    friend void backward(const Tensor& loss);
    std::vector<TapeEntry> entries_;
};

/// Whether new operations are being recorded on this thread.
bool grad_enabled() noexcept;

/// Disables recording for its lifetime.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

/// Accumulates d(loss)/d(t) into every requires_grad tensor reachable from
/// `loss`, replaying the active tape in reverse, then clears the tape.
void backward(const Tensor& loss);

LAYERPARTI_END_NAMESPACE
