#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cfvae {

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::vector<size_t> row_major_strides(const Shape& s) {
  std::vector<size_t> st(s.size(), 1);
  for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  uint64_t id;

  TensorImpl(Shape s, double fill) : shape(std::move(s)), data(numel(shape), fill), id(next_id()) {}
  TensorImpl(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)), id(next_id()) {
    if (data.size() != numel(shape))
      throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  static uint64_t next_id() {
    static std::atomic<uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats. A Tensor is a shared handle:
// copies alias the same buffer, which is how the tape hands gradients back
// to the caller's parameters. Rank 0 (empty shape) is a scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : impl_(std::make_shared<detail::TensorImpl>(std::move(shape), fill)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor(Shape{}, v); }
  static Tensor from_data(Shape shape, std::vector<double> data) {
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>(std::move(shape), std::move(data));
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  size_t ndim() const { return impl_->shape.size(); }
  size_t size() const { return impl_->data.size(); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double> to_vector() const { return impl_->data; }

  double item() const {
    if (size() != 1)
      throw std::invalid_argument("item: tensor has shape " + shape_str(shape()) + ", expected one element");
    return impl_->data[0];
  }
  double at(size_t i) const { return impl_->data.at(i); }
  double at(size_t i, size_t j) const {
    if (ndim() != 2) throw std::invalid_argument("at(i,j): tensor is not rank 2");
    return impl_->data[i * impl_->shape[1] + j];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }

  // Gradient buffer; nullptr until allocated by a backward pass.
  const double* grad() const { return impl_->grad.empty() ? nullptr : impl_->grad.data(); }
  double* grad_mut() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad.data();
  }
  double grad_at(size_t i) const {
    if (impl_->grad.empty()) throw std::logic_error("grad_at: tensor has no gradient");
    return impl_->grad.at(i);
  }
  void zero_grad() {
    if (!impl_->grad.empty()) impl_->grad.assign(impl_->grad.size(), 0.0);
  }

  // Deep copy of the values; fresh identity, no gradient, no grad flag.
  Tensor clone() const { return from_data(impl_->shape, impl_->data); }

  uint64_t id() const { return impl_->id; }
  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Define-by-run tape. Construction pushes the tape as the active recorder
// for the current thread; destruction pops it. Ops record an entry when a
// tape is active and some input requires gradients. Entries are in
// execution order, so a single reverse pass is a valid topological replay.
class Tape {
 public:
  struct Entry {
    const char* op;
    std::vector<uint64_t> inputs;
    uint64_t output;
    std::function<void()> backward;
  };

  Tape() : prev_(slot()) { slot() = this; }
  ~Tape() { slot() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return slot(); }

  void record(const char* op, std::initializer_list<Tensor> inputs, const Tensor& output,
              std::function<void()> backward) {
    Entry e;
    e.op = op;
    for (const Tensor& t : inputs) e.inputs.push_back(t.id());
    e.output = output.id();
    e.backward = std::move(backward);
    entries_.push_back(std::move(e));
  }

  // Seeds root.grad with 1 and replays every entry once, newest first.
  // Gradients accumulate additively, so repeated backward calls sum.
  void backward(const Tensor& root) {
    if (root.size() != 1)
      throw std::invalid_argument("backward: root must be scalar, got shape " + shape_str(root.shape()));
    Tensor r = root;
    r.grad_mut()[0] += 1.0;
    for (size_t i = entries_.size(); i-- > 0;) entries_[i].backward();
  }

  void clear() { entries_.clear(); }
  size_t size() const { return entries_.size(); }

 private:
  static Tape*& slot() {
    thread_local Tape* t = nullptr;
    return t;
  }

  std::vector<Entry> entries_;
  Tape* prev_;
};

// Suspends recording for the current thread (inference paths, numeric
// differencing inside grad checks).
struct NoGradGuard {
  NoGradGuard() : saved_(exchange_active(nullptr)) {}
  ~NoGradGuard() { exchange_active(saved_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  static Tape* exchange_active(Tape* t);
  Tape* saved_;
};

}  // namespace cfvae
