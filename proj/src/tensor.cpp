#include "carunet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

void Shape::validate() const {
  for (std::size_t d : dims_) {
    if (d == 0) fail(ErrorKind::shape, "shape " + str() + " has a zero dimension");
  }
}

std::size_t Shape::numel() const {
  if (dims_.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  if (shape.rank() == 0) fail(ErrorKind::shape, "tensor shape must have at least one dimension");
  impl_->data.assign(shape.numel(), Real(0));
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<Real> data, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  if (shape.rank() == 0) fail(ErrorKind::shape, "tensor shape must have at least one dimension");
  if (shape.numel() != data.size()) {
    fail(ErrorKind::shape, "shape " + shape.str() + " needs " + std::to_string(shape.numel()) + " values, got " +
                               std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor::Impl& Tensor::impl() const {
  if (!impl_) fail(ErrorKind::state, "use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
std::span<const Real> Tensor::data() const { return impl().data; }
std::span<Real> Tensor::data() { return impl().data; }

Real Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::shape, "item() on tensor of shape " + shape().str());
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (impl().tape_id != 0) fail(ErrorKind::state, "requires_grad can only be changed on leaf tensors");
  impl().requires_grad = value;
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<const Real> Tensor::grad() const { return impl().grad; }

std::span<Real> Tensor::mutable_grad() {
  Impl& i = impl();
  if (!i.requires_grad) fail(ErrorKind::state, "gradient requested for a tensor that does not require grad");
  if (i.grad.empty()) i.grad.assign(i.data.size(), Real(0));
  return i.grad;
}

void Tensor::zero_grad() { impl().grad.clear(); }

std::optional<std::size_t> Tensor::node_id() const {
  if (impl().tape_id == 0) return std::nullopt;
  return impl().node_id;
}

Tensor Tensor::clone() const {
  Tensor t(shape(), std::vector<Real>(data().begin(), data().end()), requires_grad());
  t.impl_->grad = impl().grad;
  return t;
}

Tensor Tensor::detach() const { return Tensor(shape(), std::vector<Real>(data().begin(), data().end()), false); }

namespace {

std::atomic<std::uint64_t> next_tape_id{1};
thread_local Tape* current_tape = nullptr;
thread_local BranchTrace* current_trace = nullptr;

}  // namespace

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

void Tape::record(std::string_view op, std::span<const Tensor> inputs, Tensor& output, BackwardFn backward) {
  if (consumed_) fail(ErrorKind::state, "tape already consumed by backward(); clear() it before recording");
  for (const Tensor& in : inputs) {
    const std::uint64_t tid = in.impl().tape_id;
    if (tid != 0 && tid != id_) {
      fail(ErrorKind::state, std::string(op) + ": input was recorded on a different tape; detach() it first");
    }
  }
  Tensor::Impl& out = output.impl();
  out.requires_grad = true;
  out.tape_id = id_;
  out.node_id = nodes_.size();
  nodes_.push_back(Node{std::string(op), std::vector<Tensor>(inputs.begin(), inputs.end()), output, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) fail(ErrorKind::state, "backward() called twice on the same forward pass");
  if (loss.numel() != 1) fail(ErrorKind::shape, "backward() needs a scalar loss, got shape " + loss.shape().str());
  const Tensor::Impl& li = loss.impl();
  if (li.tape_id != id_) fail(ErrorKind::state, "loss was not produced on this tape");
  consumed_ = true;

  Tensor seed = nodes_[li.node_id].output;
  auto g = seed.mutable_grad();
  g[0] += Real(1);

  for (std::size_t i = li.node_id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.output.has_grad()) continue;
    node.backward(node.output.grad());
  }
}

void Tape::clear() {
  nodes_.clear();
  consumed_ = false;
}

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(current_tape) { current_tape = nullptr; }
NoGradScope::~NoGradScope() { current_tape = previous_; }

Tape* active_tape() { return current_tape; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (current_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void record(std::string_view op, std::initializer_list<const Tensor*> inputs, Tensor& output,
            Tape::BackwardFn backward) {
  std::vector<Tensor> in;
  in.reserve(inputs.size());
  for (const Tensor* t : inputs) in.push_back(*t);
  current_tape->record(op, in, output, std::move(backward));
}

BranchTraceScope::BranchTraceScope(BranchTrace& trace) : previous_(current_trace) { current_trace = &trace; }
BranchTraceScope::~BranchTraceScope() { current_trace = previous_; }
BranchTrace* active_branch_trace() { return current_trace; }

void check_finite(std::string_view op, std::span<const Real> values) {
#if !defined(NDEBUG) || defined(CARUNET_CHECK_FINITE)
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      fail(ErrorKind::numeric, std::string(op) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
#else
  (void)op;
  (void)values;
#endif
}

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
