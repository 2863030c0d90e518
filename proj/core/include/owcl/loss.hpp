#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "owcl/rng.hpp"
#include "owcl/tensor.hpp"

namespace owcl {

struct ArcFaceParams {
  double scale = 30.0;   // s
  double margin = 0.5;   // m, radians
};

// One trainable prototype row per seen class. Rows are stored unnormalized
// and normalized inside the loss; rows carry over bit-for-bit when the bank
// grows and every row stays trainable at every stage.
struct PrototypeBank {
  std::size_t dim = 0;
  Tensor prototypes;                     // [K, C]
  std::vector<std::uint64_t> classes;    // row -> class id
  std::vector<std::size_t> birth_stage;  // row -> stage that introduced it

  std::size_t rows() const { return classes.size(); }
  bool has(std::uint64_t cls) const;
  std::size_t row_of(std::uint64_t cls) const;
};

PrototypeBank make_bank(std::size_t dim);

// Appends seeded-normal rows for classes not yet present; existing rows are
// untouched. New rows belong to `stage`.
void bank_extend(PrototypeBank& bank, const std::vector<std::uint64_t>& classes,
                 std::size_t stage, Rng& rng);

// cos(theta_j) between the normalized embedding and every normalized
// prototype row; differentiable w.r.t. both. [1, K]
Tensor cosine_logits(const Tensor& embedding, const PrototypeBank& bank);

// ArcFace: -log( e^{s cos(th_y+m)} / (e^{s cos(th_y+m)} + sum_{j!=y} e^{s cos th_j}) )
// with the standard easy-margin guard: the additive-angle form applies while
// cos(th_y) > cos(pi - m); past that, phi = cos(th_y) - m sin(m).
Tensor arcface_loss(const Tensor& embedding, const PrototypeBank& bank, std::uint64_t label,
                    const ArcFaceParams& params);

void visit_params(PrototypeBank& bank, const std::string& prefix, const ParamVisitor& fn);

}  // namespace owcl
