#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "owcl/rng.hpp"
#include "owcl/tensor.hpp"

namespace owcl {

// Procedural class geometry: each class is a seeded prototype image — the sum
// of three random sinusoidal gratings plus a class-unique quadrant brightness
// code — and samples are the prototype under small circular translation and
// Gaussian pixel noise. Classes regenerate independently (per-class seeds).
struct SyntheticSpec {
  std::size_t num_train_classes = 120;
  std::size_t num_test_classes = 60;
  std::size_t samples_per_class = 20;  // M
  std::size_t image_side = 32;
  double freq_lo = 1.0;  // grating frequency range, cycles per image
  double freq_hi = 3.0;  // calibrated: nearest-prototype stays > 98% under shift
  double noise_sigma = 0.05;
  std::uint64_t master_seed = 1;
};

struct ClassSamples {
  std::uint64_t class_id = 0;
  std::vector<Tensor> images;  // M images, each [side, side]
};

struct DatasetSplit {
  std::size_t image_side = 0;
  std::size_t samples_per_class = 0;
  std::vector<std::uint64_t> train_classes;
  std::vector<std::uint64_t> test_classes;
  std::vector<ClassSamples> classes;  // train classes first, then test
};

// Max circular shift applied per sample, in pixels, each axis.
inline constexpr int kMaxTranslation = 2;

// Quadrant brightness levels; a class's base-4 code picks one per quadrant.
// Amplitude is calibrated low: the code's job is to break ties when grating
// frequencies collide, not to make classes linearly separable from raw
// brightness alone (that would let an untrained encoder saturate retrieval).
inline constexpr double kQuadrantLevels[4] = {-0.18, -0.06, 0.06, 0.18};

void validate_spec(const SyntheticSpec& spec);

// Disjoint id partition: [0, T) train, [T, T+E) test. No samples generated.
DatasetSplit open_world_split(const SyntheticSpec& spec);

// The noiseless class image. Deterministic in (master_seed, class_id).
Tensor class_prototype(const SyntheticSpec& spec, std::uint64_t class_id);

// Full dataset: open_world_split plus M samples per class.
DatasetSplit generate_dataset(const SyntheticSpec& spec);

const ClassSamples& find_class(const DatasetSplit& split, std::uint64_t class_id);

// "OWDS" little-endian binary format; see serialize_dataset in data.cpp.
std::vector<std::uint8_t> serialize_dataset(const DatasetSplit& split);
DatasetSplit deserialize_dataset(const std::vector<std::uint8_t>& bytes);

// Fisher-Yates under a seeded stream; used for stage assignment of classes.
std::vector<std::uint64_t> seeded_permutation(std::vector<std::uint64_t> ids,
                                              std::uint64_t seed);

}  // namespace owcl
