#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "carunet/error.hpp"
#include "carunet/precision.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

/// Ordered list of positive dimension sizes. Images are N x C x H x W.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const;
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::string str() const;

  bool operator==(const Shape&) const = default;

 private:
  void validate() const;

  std::vector<std::size_t> dims_;
};

class Tape;

/// Dense row-major array with an optional gradient slot.
///
/// Tensor is a shared handle: copies alias the same storage, the way a
/// parameter is shared between a module and the tape that records its use.
/// Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false) { return Tensor(std::move(shape), requires_grad); }
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false) { return full(Shape{1}, value, requires_grad); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }
  std::size_t dim(std::size_t axis) const { return shape()[axis]; }

  std::span<const Real> data() const;
  std::span<Real> data();
  Real item() const;

  bool requires_grad() const;
  /// Only leaves (tensors not produced by a recorded op) may toggle this.
  void set_requires_grad(bool value);

  bool has_grad() const;
  /// Empty when no gradient has been accumulated.
  std::span<const Real> grad() const;
  /// Zero-initialises the gradient buffer on first use.
  std::span<Real> mutable_grad();
  void zero_grad();

  /// Position of the producing op on its tape, if recorded.
  std::optional<std::size_t> node_id() const;

  Tensor clone() const;
  /// Same values, no tape linkage, no gradient.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape;

  struct Impl {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;
    std::uint64_t tape_id = 0;
    std::size_t node_id = 0;
  };

  Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

/// Append-only record of differentiable operations from one forward pass.
///
/// Nodes are stored in forward order and replayed in exact reverse order by
/// backward(). A tape is consumed by backward(); call clear() before the
/// next forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const Real> grad_output)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `output` as produced by `op` from `inputs`. `backward`
  /// receives the gradient of `output` and accumulates into input gradients.
  void record(std::string_view op, std::span<const Tensor> inputs, Tensor& output, BackwardFn backward);

  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_at(std::size_t index) const { return nodes_.at(index).op; }
  bool consumed() const { return consumed_; }
  void clear();
  std::uint64_t id() const { return id_; }

 private:
  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target on the current thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on the current thread (inference, optimizer updates).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// True when an op over `inputs` must be recorded on the active tape.
bool should_record(std::initializer_list<const Tensor*> inputs);

/// Records `output` on the active tape. Callers check should_record() first.
void record(std::string_view op, std::initializer_list<const Tensor*> inputs, Tensor& output,
            Tape::BackwardFn backward);

/// Adds `fn`'s contribution into t's gradient when t requires one.
/// Takes the handle by const reference: the gradient lives in shared storage.
template <typename Fn>
void accumulate_grad(const Tensor& t, Fn&& fn) {
  if (!t.requires_grad()) return;
  Tensor handle = t;
  fn(handle.mutable_grad());
}

/// Order-sensitive fingerprint of the branches taken by piecewise-smooth
/// ops (ReLU sides, pooling winners, active clamps). Two evaluations with
/// equal fingerprints lie on the same smooth piece of the function.
class BranchTrace {
 public:
  void add(std::uint64_t value) {
    hash_ = (hash_ ^ value) * 0x100000001b3ULL;
    ++count_;
  }
  std::uint64_t hash() const { return hash_; }
  std::size_t count() const { return count_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  std::size_t count_ = 0;
};

/// Routes branch decisions on the current thread into `trace`.
class BranchTraceScope {
 public:
  explicit BranchTraceScope(BranchTrace& trace);
  ~BranchTraceScope();
  BranchTraceScope(const BranchTraceScope&) = delete;
  BranchTraceScope& operator=(const BranchTraceScope&) = delete;

 private:
  BranchTrace* previous_;
};

BranchTrace* active_branch_trace();

/// Throws a numeric error naming `op` when `values` holds NaN or Inf. Active
/// in debug builds and in builds defining CARUNET_CHECK_FINITE.
void check_finite(std::string_view op, std::span<const Real> values);

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
