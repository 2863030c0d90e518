#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "owcl/rng.hpp"

namespace owcl {

class Tape;

using ParamVisitor = std::function<void(const std::string&, class Tensor&)>;

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  // allocated lazily, and only ever for requires_grad leaves
  std::vector<double> grad;
  // transient bookkeeping for the tape currently tracking this tensor
  Tape* tape_owner = nullptr;
  int tape_slot = -1;
};

// Value-semantic handle; copies share the underlying buffer (and gradient).
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values);
  static Tensor scalar(double value) { return from({1}, {value}); }
  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double sigma = 1.0,
                      double mean = 0.0);

  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  // 2-d accessors; 1-d tensors read as a single row
  std::size_t rows() const;
  std::size_t cols() const;

  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  const double* raw() const { return impl_->data.data(); }
  double* raw_mut() { return impl_->data.data(); }

  double at(std::size_t i) const { return impl_->data.at(i); }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  Tensor clone() const;  // deep copy of values only (new leaf)

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

std::string shape_str(const std::vector<std::size_t>& s);

// Reverse-mode tape. Ops record nodes in execution order; backward replays
// them in reverse. Gradients of intermediates live in per-slot buffers owned
// by the tape, so only requires_grad leaves ever receive a persistent .grad.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() { clear(); }

  bool tracked(const Tensor& t) const {
    return t.requires_grad() ||
           (t.impl()->tape_owner == this && t.impl()->tape_slot >= 0);
  }
  // Registers t on this tape (idempotent) and returns its slot.
  int ensure_slot(const Tensor& t);
  // Slot for an op input: tracked tensors get a real slot, others -1.
  int input_slot(const Tensor& t) { return tracked(t) ? ensure_slot(t) : -1; }

  std::vector<double>& grad_buf(int slot);

  void record(const char* kind, std::function<void(Tape&)> backward) {
    nodes_.push_back(Node{kind, std::move(backward)});
  }

  // Seeds d(loss)=1, runs nodes in reverse, accumulates into the .grad of
  // every requires_grad leaf touched, then clears the tape for reuse.
  void backward(const Tensor& loss);

  void clear();
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    const char* kind;
    std::function<void(Tape&)> backward;
  };
  std::vector<std::shared_ptr<TensorImpl>> slot_tensors_;
  std::vector<std::vector<double>> slot_grads_;
  std::vector<Node> nodes_;
};

Tape* active_tape();

// RAII installer for the thread-local active tape.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---- differentiable ops ----------------------------------------------------
// All reductions accumulate left-to-right in index order; no op reorders
// floating-point sums, so identical inputs give bitwise-identical outputs.

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T -> [m,n]
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // [m,n] + [n] per row
Tensor sum_all(const Tensor& x);                      // -> [1]
Tensor mean_all(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor layernorm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);  // [r0,r1)
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
Tensor take(const Tensor& x, std::vector<std::size_t> indices);  // flat gather
Tensor l2_normalize_rows(const Tensor& x);
// Inverted dropout; eval mode returns the input handle untouched.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

// Central-difference gradient audit. Runs f under a fresh tape to get
// autodiff gradients of the scalar f(x) w.r.t. x, then perturbs each
// coordinate by +/-eps with the tape off. Returns the max relative error
// |ad - fd| / max(1, |fd|). f must be deterministic.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                  double eps = 1e-5);

}  // namespace owcl
