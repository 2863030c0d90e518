#include <doctest.h>

#include <cmath>
#include <numbers>

#include "owcl/loss.hpp"

using namespace owcl;

namespace {

PrototypeBank bank_from_rows(std::vector<std::vector<double>> rows,
                             std::vector<std::uint64_t> classes) {
  PrototypeBank b = make_bank(rows[0].size());
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  b.prototypes = Tensor::from({rows.size(), rows[0].size()}, flat);
  b.classes = std::move(classes);
  b.birth_stage.assign(rows.size(), 1);
  return b;
}

}  // namespace

TEST_CASE("arcface: hand-built 3-class example matches the scalar formula to 1e-12") {
  // normalized prototypes along axes; embedding at angle with known cosines
  PrototypeBank bank = bank_from_rows({{1, 0}, {0, 1}, {-1, 0}}, {10, 20, 30});
  Tensor e = Tensor::from({1, 2}, {0.6, 0.8});
  ArcFaceParams p;
  p.scale = 4.0;
  p.margin = 0.3;
  const double loss = arcface_loss(e, bank, 20, p).item();

  const double cos_y = 0.8, cos_0 = 0.6, cos_2 = -0.6;
  const double phi = std::cos(std::acos(cos_y) + 0.3);
  const double zy = 4.0 * phi, z0 = 4.0 * cos_0, z2 = 4.0 * cos_2;
  const double want = -std::log(std::exp(zy) / (std::exp(zy) + std::exp(z0) + std::exp(z2)));
  CHECK(std::abs(loss - want) < 1e-12);
}

TEST_CASE("arcface: margin 0 degenerates to softmax cross-entropy on scaled cosines") {
  Rng rng(3);
  PrototypeBank bank = make_bank(6);
  bank_extend(bank, {1, 2, 3, 4}, 1, rng);
  Tensor e = Tensor::randn({1, 6}, rng);
  ArcFaceParams p;
  p.scale = 12.0;
  p.margin = 0.0;
  const double got = arcface_loss(e, bank, 3, p).item();

  // oracle: plain CE over s*cos with scalar loops
  Tensor cos = cosine_logits(e, bank);
  const std::size_t y = bank.row_of(3);
  double mx = -1e300;
  for (std::size_t j = 0; j < 4; ++j) mx = std::max(mx, 12.0 * cos.at(j));
  double z = 0.0;
  for (std::size_t j = 0; j < 4; ++j) z += std::exp(12.0 * cos.at(j) - mx);
  const double want = (mx + std::log(z)) - 12.0 * cos.at(y);
  CHECK(std::abs(got - want) < 1e-12);
}

TEST_CASE("arcface: easy-margin fallback branch for cos below cos(pi - m)") {
  PrototypeBank bank = bank_from_rows({{1, 0}, {0, 1}}, {0, 1});
  Tensor e = Tensor::from({1, 2}, {-1.0, 0.0});  // cos(theta_0) = -1
  ArcFaceParams p;
  p.scale = 2.0;
  p.margin = 0.5;
  const double loss = arcface_loss(e, bank, 0, p).item();
  const double zy = 2.0 * (-1.0 - 0.5 * std::sin(0.5));  // phi = c - m sin m
  const double z1 = 2.0 * 0.0;
  const double want = -std::log(std::exp(zy) / (std::exp(zy) + std::exp(z1)));
  CHECK(std::abs(loss - want) < 1e-12);
}

TEST_CASE("arcface: gradcheck on embedding and prototypes across 10 seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 7);
    PrototypeBank bank = make_bank(5);
    bank_extend(bank, {1, 2, 3}, 1, rng);
    Tensor e = Tensor::randn({1, 5}, rng);
    // stay away from the |cos| = 1 boundary (random vectors already are)
    ArcFaceParams p;
    auto f = [&](const Tensor&) { return arcface_loss(e, bank, 2, p); };
    CHECK(grad_check([&](const Tensor&) { return f(e); }, e) < 1e-6);
    CHECK(grad_check([&](const Tensor&) { return f(e); }, bank.prototypes) < 1e-6);
  }
}

TEST_CASE("arcface: invariant to embedding rescaling") {
  Rng rng(17);
  PrototypeBank bank = make_bank(8);
  bank_extend(bank, {1, 2, 3, 4, 5}, 1, rng);
  Tensor e = Tensor::randn({1, 8}, rng);
  Tensor e3 = scale(e, 3.0);
  ArcFaceParams p;
  const double a = arcface_loss(e, bank, 4, p).item();
  const double b = arcface_loss(e3, bank, 4, p).item();
  CHECK(std::abs(a - b) < 1e-12);
}

TEST_CASE("arcface: zero embedding is an error, not a NaN") {
  Rng rng(1);
  PrototypeBank bank = make_bank(4);
  bank_extend(bank, {1, 2}, 1, rng);
  Tensor z = Tensor::zeros({1, 4});
  ArcFaceParams p;
  CHECK_THROWS_AS(arcface_loss(z, bank, 1, p), std::runtime_error);
}

TEST_CASE("arcface: parameter guards") {
  Rng rng(1);
  PrototypeBank bank = make_bank(4);
  bank_extend(bank, {1}, 1, rng);
  Tensor e = Tensor::randn({1, 4}, rng);
  ArcFaceParams bad;
  bad.margin = -0.1;
  CHECK_THROWS_AS(arcface_loss(e, bank, 1, bad), std::invalid_argument);
  bad.margin = std::numbers::pi / 2;
  CHECK_THROWS_AS(arcface_loss(e, bank, 1, bad), std::invalid_argument);
  bad.margin = 0.5;
  bad.scale = 0.0;
  CHECK_THROWS_AS(arcface_loss(e, bank, 1, bad), std::invalid_argument);
  ArcFaceParams ok;
  CHECK_THROWS_AS(arcface_loss(e, bank, 99, ok), std::invalid_argument);  // unknown class
}

TEST_CASE("bank: carry-over keeps old rows bit-for-bit and appends only new classes") {
  Rng rng(5);
  PrototypeBank bank = make_bank(6);
  bank_extend(bank, {5, 7}, 1, rng);
  REQUIRE(bank.rows() == 2);
  // simulate a stage of training on the rows
  for (double& v : bank.prototypes.values()) v += 0.125;
  const std::vector<double> before = bank.prototypes.values();

  bank_extend(bank, {7, 9}, 2, rng);
  REQUIRE(bank.rows() == 3);
  CHECK(bank.classes == std::vector<std::uint64_t>{5, 7, 9});
  CHECK(bank.birth_stage == std::vector<std::size_t>{1, 1, 2});
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(bank.prototypes.values()[i] == before[i]);
  CHECK(bank.row_of(9) == 2);
  CHECK_THROWS_AS(bank.row_of(6), std::invalid_argument);
}

TEST_CASE("bank: extension is deterministic under the init seed") {
  Rng r1(9), r2(9);
  PrototypeBank a = make_bank(4), b = make_bank(4);
  bank_extend(a, {1, 2, 3}, 1, r1);
  bank_extend(b, {1, 2, 3}, 1, r2);
  for (std::size_t i = 0; i < a.prototypes.size(); ++i)
    CHECK(a.prototypes.values()[i] == b.prototypes.values()[i]);
}

TEST_CASE("bank: empty bank rejects loss evaluation") {
  PrototypeBank bank = make_bank(4);
  Tensor e = Tensor::from({1, 4}, {1, 0, 0, 0});
  CHECK_THROWS_AS(cosine_logits(e, bank), std::runtime_error);
}
