#include "owcl/data.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace owcl {

void validate_spec(const SyntheticSpec& spec) {
  if (spec.num_train_classes < 1 || spec.num_test_classes < 1 || spec.samples_per_class < 1)
    throw std::invalid_argument("spec: class and sample counts must be >= 1");
  if (spec.image_side < 4 || spec.image_side % 2 != 0)
    throw std::invalid_argument("spec: image side must be even and >= 4 (quadrant code)");
  if (spec.noise_sigma < 0.0) throw std::invalid_argument("spec: noise sigma must be >= 0");
  if (!(spec.freq_lo > 0.0) || spec.freq_lo > spec.freq_hi)
    throw std::invalid_argument("spec: frequency range must satisfy 0 < lo <= hi");
  if (spec.num_train_classes + spec.num_test_classes > 256)
    throw std::invalid_argument(
        "spec: at most 256 classes (base-4 quadrant codes are unique up to 4^4)");
}

DatasetSplit open_world_split(const SyntheticSpec& spec) {
  validate_spec(spec);
  DatasetSplit split;
  split.image_side = spec.image_side;
  split.samples_per_class = spec.samples_per_class;
  for (std::size_t i = 0; i < spec.num_train_classes; ++i) split.train_classes.push_back(i);
  for (std::size_t i = 0; i < spec.num_test_classes; ++i)
    split.test_classes.push_back(spec.num_train_classes + i);
  return split;
}

namespace {

struct Grating {
  double freq, theta, phase;
};

// Draw order is the per-class rng's fixed prefix; sample draws follow it.
std::vector<Grating> draw_gratings(Rng& rng, const SyntheticSpec& spec) {
  std::vector<Grating> gs(3);
  for (auto& g : gs) {
    g.freq = rng.uniform(spec.freq_lo, spec.freq_hi);
    g.theta = rng.uniform(0.0, std::numbers::pi);
    g.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return gs;
}

Tensor render_prototype(const SyntheticSpec& spec, std::uint64_t class_id,
                        const std::vector<Grating>& gs) {
  const std::size_t side = spec.image_side;
  Tensor img = Tensor::zeros({side, side});
  double* p = img.raw_mut();
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      double v = 0.0;
      for (const auto& g : gs) {
        const double u = ((c + 0.5) * std::cos(g.theta) + (r + 0.5) * std::sin(g.theta)) /
                         static_cast<double>(side);
        v += std::sin(2.0 * std::numbers::pi * g.freq * u + g.phase) / 3.0;
      }
      const std::size_t q = (r < side / 2 ? 0u : 2u) + (c < side / 2 ? 0u : 1u);
      v += kQuadrantLevels[(class_id >> (2 * q)) & 3u];
      p[r * side + c] = v;
    }
  return img;
}

}  // namespace

Tensor class_prototype(const SyntheticSpec& spec, std::uint64_t class_id) {
  validate_spec(spec);
  Rng rng = make_stream(spec.master_seed, "data/class", {class_id});
  return render_prototype(spec, class_id, draw_gratings(rng, spec));
}

DatasetSplit generate_dataset(const SyntheticSpec& spec) {
  DatasetSplit split = open_world_split(spec);
  const std::size_t side = spec.image_side;
  auto gen_class = [&](std::uint64_t id) {
    Rng rng = make_stream(spec.master_seed, "data/class", {id});
    const Tensor proto = render_prototype(spec, id, draw_gratings(rng, spec));
    const double* pp = proto.raw();
    ClassSamples cs;
    cs.class_id = id;
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      const int dx = static_cast<int>(rng.uniform_int(2 * kMaxTranslation + 1)) - kMaxTranslation;
      const int dy = static_cast<int>(rng.uniform_int(2 * kMaxTranslation + 1)) - kMaxTranslation;
      Tensor img = Tensor::zeros({side, side});
      double* ip = img.raw_mut();
      const int n = static_cast<int>(side);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
          const int sr = ((r - dy) % n + n) % n;
          const int sc = ((c - dx) % n + n) % n;
          ip[r * side + c] = pp[sr * side + sc];
        }
      if (spec.noise_sigma > 0.0)
        for (std::size_t i = 0; i < side * side; ++i) ip[i] += spec.noise_sigma * rng.normal();
      cs.images.push_back(std::move(img));
    }
    split.classes.push_back(std::move(cs));
  };
  for (std::uint64_t id : split.train_classes) gen_class(id);
  for (std::uint64_t id : split.test_classes) gen_class(id);
  return split;
}

const ClassSamples& find_class(const DatasetSplit& split, std::uint64_t class_id) {
  for (const auto& cs : split.classes)
    if (cs.class_id == class_id) return cs;
  throw std::invalid_argument("dataset: no class " + std::to_string(class_id));
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct ByteReader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > bytes.size())
      throw std::runtime_error("dataset: truncated at byte " + std::to_string(pos) +
                               " reading " + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
};

constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace

// Layout: "OWDS", version u32, num_train u32, num_test u32, side u32, M u32,
// then per class (train order, then test order): id u32, M * side^2 f64.
std::vector<std::uint8_t> serialize_dataset(const DatasetSplit& split) {
  if (split.classes.size() != split.train_classes.size() + split.test_classes.size())
    throw std::runtime_error("dataset: class list does not match the id partition");
  std::vector<std::uint8_t> out = {'O', 'W', 'D', 'S'};
  put_u32(out, kDatasetVersion);
  put_u32(out, static_cast<std::uint32_t>(split.train_classes.size()));
  put_u32(out, static_cast<std::uint32_t>(split.test_classes.size()));
  put_u32(out, static_cast<std::uint32_t>(split.image_side));
  put_u32(out, static_cast<std::uint32_t>(split.samples_per_class));
  for (const auto& cs : split.classes) {
    put_u32(out, static_cast<std::uint32_t>(cs.class_id));
    if (cs.images.size() != split.samples_per_class)
      throw std::runtime_error("dataset: class " + std::to_string(cs.class_id) +
                               " has wrong sample count");
    for (const auto& img : cs.images) {
      if (img.size() != split.image_side * split.image_side)
        throw std::runtime_error("dataset: class " + std::to_string(cs.class_id) +
                                 " has wrong image shape");
      for (std::size_t i = 0; i < img.size(); ++i) put_f64(out, img.at(i));
    }
  }
  return out;
}

DatasetSplit deserialize_dataset(const std::vector<std::uint8_t>& bytes) {
  ByteReader rd{bytes};
  rd.need(4, "magic");
  if (!(bytes[0] == 'O' && bytes[1] == 'W' && bytes[2] == 'D' && bytes[3] == 'S'))
    throw std::runtime_error("dataset: bad magic (want OWDS)");
  rd.pos = 4;
  const std::uint32_t version = rd.u32("version");
  if (version != kDatasetVersion)
    throw std::runtime_error("dataset: unsupported version " + std::to_string(version));
  const std::uint32_t n_train = rd.u32("train count");
  const std::uint32_t n_test = rd.u32("test count");
  const std::uint32_t side = rd.u32("image side");
  const std::uint32_t m = rd.u32("samples per class");

  DatasetSplit split;
  split.image_side = side;
  split.samples_per_class = m;
  for (std::uint32_t k = 0; k < n_train + n_test; ++k) {
    ClassSamples cs;
    cs.class_id = rd.u32("class id");
    for (std::uint32_t s = 0; s < m; ++s) {
      Tensor img = Tensor::zeros({side, side});
      double* ip = img.raw_mut();
      for (std::size_t i = 0; i < static_cast<std::size_t>(side) * side; ++i)
        ip[i] = rd.f64("pixel");
      cs.images.push_back(std::move(img));
    }
    (k < n_train ? split.train_classes : split.test_classes).push_back(cs.class_id);
    split.classes.push_back(std::move(cs));
  }
  if (rd.pos != bytes.size())
    throw std::runtime_error("dataset: " + std::to_string(bytes.size() - rd.pos) +
                             " trailing bytes at " + std::to_string(rd.pos));
  return split;
}

std::vector<std::uint64_t> seeded_permutation(std::vector<std::uint64_t> ids,
                                              std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[rng.uniform_int(i)]);
  return ids;
}

}  // namespace owcl
