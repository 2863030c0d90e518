#include "owcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace owcl {

namespace {

std::size_t shape_size(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

// c[m,n] += a[m,k] * b[k,n]
void mm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = ai[l];
      const double* bl = b + l * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

// c[m,n] += a[m,k] * bt[n,k]^T   (row-dot form)
void mm_nt_acc(const double* a, const double* bt, double* c, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = bt + j * k;
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
      ci[j] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
void mm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t l = 0; l < m; ++l) {
    const double* al = a + l * k;
    const double* bl = b + l * n;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = al[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  Tensor t;
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(shape_size(t.impl_->shape), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
  if (shape_size(shape) != values.size())
    shape_error("Tensor::from", "shape " + shape_str(shape) + " does not hold " +
                                    std::to_string(values.size()) + " values");
  Tensor t;
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  return t;
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double sigma, double mean) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.impl_->data) v = rng.normal(mean, sigma);
  return t;
}

std::size_t Tensor::rows() const {
  if (ndim() == 1) return 1;
  if (ndim() == 2) return impl_->shape[0];
  shape_error("rows", "tensor is " + shape_str(impl_->shape) + ", need <= 2-d");
}

std::size_t Tensor::cols() const {
  if (ndim() == 1) return impl_->shape[0];
  if (ndim() == 2) return impl_->shape[1];
  shape_error("cols", "tensor is " + shape_str(impl_->shape) + ", need <= 2-d");
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols())
    shape_error("at", "(" + std::to_string(r) + "," + std::to_string(c) + ") out of " +
                          shape_str(impl_->shape));
  return impl_->data[r * cols() + c];
}

double Tensor::item() const {
  if (size() != 1)
    throw std::runtime_error("item: tensor has " + std::to_string(size()) + " elements");
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) {
    if (!impl_->requires_grad)
      throw std::runtime_error("grad: tensor does not require grad");
    impl_->grad.assign(impl_->data.size(), 0.0);
  }
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) throw std::runtime_error("grad: no gradient accumulated");
  return impl_->grad;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

// ---- Tape -------------------------------------------------------------------

int Tape::ensure_slot(const Tensor& t) {
  auto impl = t.impl();
  if (impl->tape_owner == this && impl->tape_slot >= 0) return impl->tape_slot;
  impl->tape_owner = this;
  impl->tape_slot = static_cast<int>(slot_tensors_.size());
  slot_tensors_.push_back(impl);
  slot_grads_.emplace_back();
  return impl->tape_slot;
}

std::vector<double>& Tape::grad_buf(int slot) {
  auto& buf = slot_grads_.at(static_cast<std::size_t>(slot));
  if (buf.empty()) buf.assign(slot_tensors_[static_cast<std::size_t>(slot)]->data.size(), 0.0);
  return buf;
}

void Tape::backward(const Tensor& loss) {
  if (loss.impl()->tape_owner != this || loss.impl()->tape_slot < 0)
    throw std::runtime_error("backward: loss is not on this tape (detached or eval-mode)");
  if (loss.size() != 1)
    throw std::runtime_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
  grad_buf(loss.impl()->tape_slot).assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward(*this);
  for (std::size_t i = 0; i < slot_tensors_.size(); ++i) {
    auto& impl = slot_tensors_[i];
    if (!impl->requires_grad || slot_grads_[i].empty()) continue;
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
    for (std::size_t j = 0; j < slot_grads_[i].size(); ++j) impl->grad[j] += slot_grads_[i][j];
  }
  clear();
}

void Tape::clear() {
  for (auto& impl : slot_tensors_) {
    if (impl->tape_owner == this) {
      impl->tape_owner = nullptr;
      impl->tape_slot = -1;
    }
  }
  slot_tensors_.clear();
  slot_grads_.clear();
  nodes_.clear();
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

// ---- ops --------------------------------------------------------------------

namespace {

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

void check_2d_like(const char* op, const Tensor& t) {
  if (t.ndim() == 0 || t.ndim() > 2)
    shape_error(op, "need 1-d or 2-d tensor, got " + shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d_like("matmul", a);
  check_2d_like("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2)
    shape_error("matmul", "inner dims differ: " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  mm_acc(a.raw(), b.raw(), out.raw_mut(), m, k, n);
  Tape* tp = active_tape();
  if (tp && (tp->tracked(a) || tp->tracked(b))) {
    const int sa = tp->input_slot(a), sb = tp->input_slot(b);
    const int so = tp->ensure_slot(out);
    auto ai = a.impl(), bi = b.impl();
    tp->record("matmul", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      if (sa >= 0) mm_nt_acc(go.data(), bi->data.data(), t.grad_buf(sa).data(), m, n, k);
      if (sb >= 0) mm_tn_acc(ai->data.data(), go.data(), t.grad_buf(sb).data(), m, k, n);
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_2d_like("matmul_nt", a);
  check_2d_like("matmul_nt", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (k != b.cols())
    shape_error("matmul_nt", "inner dims differ: " + shape_str(a.shape()) + " x " +
                                 shape_str(b.shape()) + "^T");
  Tensor out = Tensor::zeros({m, n});
  mm_nt_acc(a.raw(), b.raw(), out.raw_mut(), m, k, n);
  Tape* tp = active_tape();
  if (tp && (tp->tracked(a) || tp->tracked(b))) {
    const int sa = tp->input_slot(a), sb = tp->input_slot(b);
    const int so = tp->ensure_slot(out);
    auto ai = a.impl(), bi = b.impl();
    tp->record("matmul_nt", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      if (sa >= 0) mm_acc(go.data(), bi->data.data(), t.grad_buf(sa).data(), m, n, k);
      if (sb >= 0) mm_tn_acc(go.data(), ai->data.data(), t.grad_buf(sb).data(), m, n, k);
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  check_2d_like("transpose", x);
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.raw_mut()[j * m + i] = x.raw()[i * n + j];
  Tape* tp = active_tape();
  if (tp && tp->tracked(x)) {
    const int sx = tp->ensure_slot(x);
    const int so = tp->ensure_slot(out);
    tp->record("transpose", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      auto& gx = t.grad_buf(sx);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[j * m + i];
    });
  }
  return out;
}

namespace {

template <typename FwdFn, typename BwdA, typename BwdB>
Tensor binary_elementwise(const char* kind, const Tensor& a, const Tensor& b, FwdFn fwd,
                          BwdA bwd_a, BwdB bwd_b) {
  if (!same_shape(a, b))
    shape_error(kind, "shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.raw_mut()[i] = fwd(a.raw()[i], b.raw()[i]);
  Tape* tp = active_tape();
  if (tp && (tp->tracked(a) || tp->tracked(b))) {
    const int sa = tp->input_slot(a), sb = tp->input_slot(b);
    const int so = tp->ensure_slot(out);
    auto ai = a.impl(), bi = b.impl();
    tp->record(kind, [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      if (sa >= 0) {
        auto& ga = t.grad_buf(sa);
        for (std::size_t i = 0; i < n; ++i) ga[i] += bwd_a(go[i], ai->data[i], bi->data[i]);
      }
      if (sb >= 0) {
        auto& gb = t.grad_buf(sb);
        for (std::size_t i = 0; i < n; ++i) gb[i] += bwd_b(go[i], ai->data[i], bi->data[i]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.raw_mut()[i] = c * x.raw()[i];
  Tape* tp = active_tape();
  if (tp && tp->tracked(x)) {
    const int sx = tp->ensure_slot(x), so = tp->ensure_slot(out);
    const std::size_t n = x.size();
    tp->record("scale", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      auto& gx = t.grad_buf(sx);
      for (std::size_t i = 0; i < n; ++i) gx[i] += c * go[i];
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  check_2d_like("add_rowvec", x);
  if (v.ndim() != 1 || v.size() != x.cols())
    shape_error("add_rowvec", "vector " + shape_str(v.shape()) + " does not match columns of " +
                                  shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.raw_mut()[i * n + j] = x.raw()[i * n + j] + v.raw()[j];
  Tape* tp = active_tape();
  if (tp && (tp->tracked(x) || tp->tracked(v))) {
    const int sx = tp->input_slot(x), sv = tp->input_slot(v);
    const int so = tp->ensure_slot(out);
    tp->record("add_rowvec", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      if (sx >= 0) {
        auto& gx = t.grad_buf(sx);
        for (std::size_t i = 0; i < m * n; ++i) gx[i] += go[i];
      }
      if (sv >= 0) {
        auto& gv = t.grad_buf(sv);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gv[j] += go[i * n + j];
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.raw()[i];
  Tensor out = Tensor::from({1}, {acc});
  Tape* tp = active_tape();
  if (tp && tp->tracked(x)) {
    const int sx = tp->ensure_slot(x), so = tp->ensure_slot(out);
    const std::size_t n = x.size();
    tp->record("sum_all", [=](Tape& t) {
      const double g = t.grad_buf(so)[0];
      auto& gx = t.grad_buf(sx);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.size())); }

Tensor softmax_rows(const Tensor& x) {
  check_2d_like("softmax_rows", x);
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.raw() + i * n;
    double* yi = out.raw_mut() + i * n;
    double mx = xi[0];
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(xi[j]))
        throw std::runtime_error("softmax_rows: non-finite input at row " + std::to_string(i));
      mx = std::max(mx, xi[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      z += yi[j];
    }
    for (std::size_t j = 0; j < n; ++j) yi[j] /= z;
  }
  Tape* tp = active_tape();
  if (tp && tp->tracked(x)) {
    const int sx = tp->ensure_slot(x), so = tp->ensure_slot(out);
    auto oi = out.impl();
    tp->record("softmax_rows", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      auto& gx = t.grad_buf(sx);
      for (std::size_t i = 0; i < m; ++i) {
        const double* yi = oi->data.data() + i * n;
        const double* gi = go.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += yi[j] * (gi[j] - dot);
      }
    });
  }
  return out;
}

Tensor layernorm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_2d_like("layernorm_rows", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.size() != n || beta.size() != n)
    shape_error("layernorm_rows", "gamma " + shape_str(gamma.shape()) + " / beta " +
                                      shape_str(beta.shape()) + " do not match columns of " +
                                      shape_str(x.shape()));
  Tensor out = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.raw() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(n);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[i] = iv;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (xi[j] - mu) * iv;
      (*xhat)[i * n + j] = xh;
      out.raw_mut()[i * n + j] = gamma.raw()[j] * xh + beta.raw()[j];
    }
  }
  Tape* tp = active_tape();
  if (tp && (tp->tracked(x) || tp->tracked(gamma) || tp->tracked(beta))) {
    const int sx = tp->input_slot(x), sg = tp->input_slot(gamma), sb = tp->input_slot(beta);
    const int so = tp->ensure_slot(out);
    auto gi = gamma.impl();
    tp->record("layernorm_rows", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      for (std::size_t i = 0; i < m; ++i) {
        const double* goi = go.data() + i * n;
        const double* xhi = xhat->data() + i * n;
        if (sg >= 0) {
          auto& gg = t.grad_buf(sg);
          for (std::size_t j = 0; j < n; ++j) gg[j] += goi[j] * xhi[j];
        }
        if (sb >= 0) {
          auto& gb = t.grad_buf(sb);
          for (std::size_t j = 0; j < n; ++j) gb[j] += goi[j];
        }
        if (sx >= 0) {
          auto& gx = t.grad_buf(sx);
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = goi[j] * gi->data[j];
            m1 += dxh;
            m2 += dxh * xhi[j];
          }
          m1 /= static_cast<double>(n);
          m2 /= static_cast<double>(n);
          const double iv = (*inv)[i];
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = goi[j] * gi->data[j];
            gx[i * n + j] += iv * (dxh - m1 - xhi[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x.raw()[i];
    out.raw_mut()[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  }
  Tape* tp = active_tape();
  if (tp && tp->tracked(x)) {
    const int sx = tp->ensure_slot(x), so = tp->ensure_slot(out);
    auto xi = x.impl();
    tp->record("gelu", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      auto& gx = t.grad_buf(sx);
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (std::size_t i = 0; i < n; ++i) {
        const double v = xi->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        gx[i] += go[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check_2d_like("concat_rows", a);
  check_2d_like("concat_rows", b);
  if (a.cols() != b.cols())
    shape_error("concat_rows", "column mismatch: " + shape_str(a.shape()) + " vs " +
                                   shape_str(b.shape()));
  const std::size_t ma = a.rows(), mb = b.rows(), n = a.cols();
  Tensor out = Tensor::zeros({ma + mb, n});
  std::copy(a.raw(), a.raw() + ma * n, out.raw_mut());
  std::copy(b.raw(), b.raw() + mb * n, out.raw_mut() + ma * n);
  Tape* tp = active_tape();
  if (tp && (tp->tracked(a) || tp->tracked(b))) {
    const int sa = tp->input_slot(a), sb = tp->input_slot(b);
    const int so = tp->ensure_slot(out);
    tp->record("concat_rows", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      if (sa >= 0) {
        auto& ga = t.grad_buf(sa);
        for (std::size_t i = 0; i < ma * n; ++i) ga[i] += go[i];
      }
      if (sb >= 0) {
        auto& gb = t.grad_buf(sb);
        for (std::size_t i = 0; i < mb * n; ++i) gb[i] += go[ma * n + i];
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_cols", "no parts");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    check_2d_like("concat_cols", p);
    if (p.rows() != m)
      shape_error("concat_cols", "row mismatch: " + shape_str(parts[0].shape()) + " vs " +
                                     shape_str(p.shape()));
    total += p.cols();
  }
  Tensor out = Tensor::zeros({m, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy(p.raw() + i * n, p.raw() + (i + 1) * n, out.raw_mut() + i * total + off);
    off += n;
  }
  Tape* tp = active_tape();
  bool any = false;
  if (tp)
    for (const auto& p : parts) any = any || tp->tracked(p);
  if (tp && any) {
    std::vector<int> slots;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      slots.push_back(tp->input_slot(p));
      widths.push_back(p.cols());
    }
    const int so = tp->ensure_slot(out);
    tp->record("concat_cols", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      std::size_t o = 0;
      for (std::size_t pi = 0; pi < slots.size(); ++pi) {
        const std::size_t n = widths[pi];
        if (slots[pi] >= 0) {
          auto& gp = t.grad_buf(slots[pi]);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gp[i * n + j] += go[i * total + o + j];
        }
        o += n;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  check_2d_like("slice_rows", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (r0 >= r1 || r1 > m)
    shape_error("slice_rows", "range [" + std::to_string(r0) + "," + std::to_string(r1) +
                                  ") out of " + shape_str(x.shape()));
  const std::size_t mo = r1 - r0;
  Tensor out = Tensor::zeros({mo, n});
  std::copy(x.raw() + r0 * n, x.raw() + r1 * n, out.raw_mut());
  Tape* tp = active_tape();
  if (tp && tp->tracked(x)) {
    const int sx = tp->ensure_slot(x), so = tp->ensure_slot(out);
    tp->record("slice_rows", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      auto& gx = t.grad_buf(sx);
      for (std::size_t i = 0; i < mo * n; ++i) gx[r0 * n + i] += go[i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
  if (shape_size(shape) != x.size())
    shape_error("reshape", shape_str(x.shape()) + " cannot become " + shape_str(shape));
  Tensor out;
  out = Tensor::from(std::move(shape), x.values());
  Tape* tp = active_tape();
  if (tp && tp->tracked(x)) {
    const int sx = tp->ensure_slot(x), so = tp->ensure_slot(out);
    const std::size_t n = x.size();
    tp->record("reshape", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      auto& gx = t.grad_buf(sx);
      for (std::size_t i = 0; i < n; ++i) gx[i] += go[i];
    });
  }
  return out;
}

Tensor take(const Tensor& x, std::vector<std::size_t> indices) {
  for (std::size_t idx : indices)
    if (idx >= x.size())
      shape_error("take", "index " + std::to_string(idx) + " out of " +
                              std::to_string(x.size()) + " elements");
  Tensor out = Tensor::zeros({indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) out.raw_mut()[i] = x.raw()[indices[i]];
  Tape* tp = active_tape();
  if (tp && tp->tracked(x)) {
    const int sx = tp->ensure_slot(x), so = tp->ensure_slot(out);
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(indices));
    tp->record("take", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      auto& gx = t.grad_buf(sx);
      for (std::size_t i = 0; i < idx->size(); ++i) gx[(*idx)[i]] += go[i];
    });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  check_2d_like("l2_normalize_rows", x);
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  auto norms = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.raw() + i * n;
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += xi[j] * xi[j];
    const double norm = std::sqrt(ss);
    if (norm < 1e-30)
      throw std::runtime_error("l2_normalize_rows: row " + std::to_string(i) +
                               " has (near-)zero norm");
    (*norms)[i] = norm;
    for (std::size_t j = 0; j < n; ++j) out.raw_mut()[i * n + j] = xi[j] / norm;
  }
  Tape* tp = active_tape();
  if (tp && tp->tracked(x)) {
    const int sx = tp->ensure_slot(x), so = tp->ensure_slot(out);
    auto oi = out.impl();
    tp->record("l2_normalize_rows", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      auto& gx = t.grad_buf(sx);
      for (std::size_t i = 0; i < m; ++i) {
        const double* yi = oi->data.data() + i * n;
        const double* gi = go.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
        const double inv = 1.0 / (*norms)[i];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += (gi[j] - yi[j] * dot) * inv;
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout: p must be in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;  // identity, same storage
  const std::size_t n = x.size();
  auto mask = std::make_shared<std::vector<double>>(n);
  const double keep = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < n; ++i) (*mask)[i] = (rng.uniform() >= p) ? keep : 0.0;
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < n; ++i) out.raw_mut()[i] = x.raw()[i] * (*mask)[i];
  Tape* tp = active_tape();
  if (tp && tp->tracked(x)) {
    const int sx = tp->ensure_slot(x), so = tp->ensure_slot(out);
    tp->record("dropout", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      auto& gx = t.grad_buf(sx);
      for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] * (*mask)[i];
    });
  }
  return out;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double eps) {
  const bool prev_rg = x.requires_grad();
  x.set_requires_grad(true);
  if (x.has_grad()) x.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f(x);
    if (y.size() != 1)
      throw std::invalid_argument("grad_check: f must return a scalar, got " +
                                  shape_str(y.shape()));
    tape.backward(y);
  }
  const std::vector<double> ad = x.grad();
  x.zero_grad();
  double max_rel = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.values()[i];
    x.values()[i] = v + eps;
    const double fp = f(x).item();
    x.values()[i] = v - eps;
    const double fm = f(x).item();
    x.values()[i] = v;
    const double fd = (fp - fm) / (2.0 * eps);
    const double rel = std::abs(ad[i] - fd) / std::max(1.0, std::abs(fd));
    max_rel = std::max(max_rel, rel);
  }
  x.set_requires_grad(prev_rg);
  return max_rel;
}

}  // namespace owcl
