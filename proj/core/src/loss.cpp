#include "owcl/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace owcl {

bool PrototypeBank::has(std::uint64_t cls) const {
  return std::find(classes.begin(), classes.end(), cls) != classes.end();
}

std::size_t PrototypeBank::row_of(std::uint64_t cls) const {
  auto it = std::find(classes.begin(), classes.end(), cls);
  if (it == classes.end())
    throw std::invalid_argument("PrototypeBank: class " + std::to_string(cls) +
                                " has no prototype row");
  return static_cast<std::size_t>(it - classes.begin());
}

PrototypeBank make_bank(std::size_t dim) {
  PrototypeBank b;
  b.dim = dim;
  b.prototypes = Tensor::zeros({0, dim});
  return b;
}

void bank_extend(PrototypeBank& bank, const std::vector<std::uint64_t>& classes,
                 std::size_t stage, Rng& rng) {
  std::vector<std::uint64_t> fresh;
  for (std::uint64_t c : classes)
    if (!bank.has(c) && std::find(fresh.begin(), fresh.end(), c) == fresh.end())
      fresh.push_back(c);
  if (fresh.empty()) return;
  const std::size_t old_rows = bank.rows(), dim = bank.dim;
  Tensor grown = Tensor::zeros({old_rows + fresh.size(), dim});
  std::copy(bank.prototypes.raw(), bank.prototypes.raw() + old_rows * dim, grown.raw_mut());
  const double sigma = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    double* row = grown.raw_mut() + (old_rows + i) * dim;
    for (std::size_t j = 0; j < dim; ++j) row[j] = rng.normal(0.0, sigma);
    bank.classes.push_back(fresh[i]);
    bank.birth_stage.push_back(stage);
  }
  grown.set_requires_grad(bank.prototypes.requires_grad());
  bank.prototypes = grown;
}

Tensor cosine_logits(const Tensor& embedding, const PrototypeBank& bank) {
  if (bank.rows() == 0) throw std::runtime_error("cosine_logits: empty prototype bank");
  if (embedding.rows() != 1 || embedding.cols() != bank.dim)
    throw std::invalid_argument("cosine_logits: embedding " + shape_str(embedding.shape()) +
                                " does not match prototype dim " + std::to_string(bank.dim));
  return matmul_nt(l2_normalize_rows(embedding), l2_normalize_rows(bank.prototypes));
}

namespace {

// Fused additive-angular-margin transform on the label logit, pre-scaled by s.
Tensor arcface_margin_logits(const Tensor& cos, std::size_t y, double s, double m) {
  const std::size_t K = cos.size();
  const double cos_m = std::cos(m), sin_m = std::sin(m);
  const double guard = std::cos(std::numbers::pi - m);
  Tensor out = Tensor::zeros(cos.shape());
  const double cy = cos.raw()[y];
  for (std::size_t j = 0; j < K; ++j) out.raw_mut()[j] = s * cos.raw()[j];
  const bool main_branch = cy > guard;
  if (main_branch) {
    const double sin_y = std::sqrt(std::max(1.0 - cy * cy, 0.0));
    out.raw_mut()[y] = s * (cy * cos_m - sin_y * sin_m);
  } else {
    out.raw_mut()[y] = s * (cy - m * sin_m);
  }
  Tape* tp = active_tape();
  if (tp && tp->tracked(cos)) {
    const int sc = tp->ensure_slot(cos), so = tp->ensure_slot(out);
    tp->record("arcface_margin", [=](Tape& t) {
      const auto& go = t.grad_buf(so);
      auto& gc = t.grad_buf(sc);
      for (std::size_t j = 0; j < K; ++j)
        if (j != y) gc[j] += s * go[j];
      double dphi = 1.0;
      if (main_branch) {
        const double s2 = std::max(1.0 - cy * cy, 1e-24);
        dphi = cos_m + cy * sin_m / std::sqrt(s2);
      }
      gc[y] += s * dphi * go[y];
    });
  }
  return out;
}

// Fused softmax cross-entropy from logits; backward is softmax - onehot.
Tensor cross_entropy_logits(const Tensor& logits, std::size_t y) {
  const std::size_t K = logits.size();
  double mx = logits.raw()[0];
  for (std::size_t j = 0; j < K; ++j) {
    if (!std::isfinite(logits.raw()[j]))
      throw std::runtime_error("cross_entropy_logits: non-finite logit");
    mx = std::max(mx, logits.raw()[j]);
  }
  double z = 0.0;
  for (std::size_t j = 0; j < K; ++j) z += std::exp(logits.raw()[j] - mx);
  const double lse = mx + std::log(z);
  Tensor out = Tensor::scalar(lse - logits.raw()[y]);
  Tape* tp = active_tape();
  if (tp && tp->tracked(logits)) {
    const int sl = tp->ensure_slot(logits), so = tp->ensure_slot(out);
    auto li = logits.impl();
    tp->record("cross_entropy_logits", [=](Tape& t) {
      const double g = t.grad_buf(so)[0];
      auto& gl = t.grad_buf(sl);
      for (std::size_t j = 0; j < K; ++j) {
        const double p = std::exp(li->data[j] - lse);
        gl[j] += g * (p - (j == y ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

}  // namespace

Tensor arcface_loss(const Tensor& embedding, const PrototypeBank& bank, std::uint64_t label,
                    const ArcFaceParams& params) {
  if (params.margin < 0.0 || params.margin >= std::numbers::pi / 2)
    throw std::invalid_argument("arcface_loss: margin must be in [0, pi/2), got " +
                                std::to_string(params.margin));
  if (params.scale <= 0.0) throw std::invalid_argument("arcface_loss: scale must be positive");
  const std::size_t y = bank.row_of(label);
  Tensor cos = cosine_logits(embedding, bank);
  Tensor logits = arcface_margin_logits(cos, y, params.scale, params.margin);
  return cross_entropy_logits(logits, y);
}

void visit_params(PrototypeBank& bank, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "/prototypes", bank.prototypes);
}

}  // namespace owcl
