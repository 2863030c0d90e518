#include "owcl/adapt.hpp"

#include <set>

namespace owcl {

AdaptKind adapt_kind_from_string(const std::string& s) {
  if (s == "freeze") return AdaptKind::FREEZE;
  if (s == "full_ft") return AdaptKind::FULL_FT;
  if (s == "lora") return AdaptKind::LORA;
  if (s == "adapter") return AdaptKind::ADAPTER;
  throw std::invalid_argument("unknown adaptation '" + s + "' (freeze|full_ft|lora|adapter)");
}

std::string to_string(AdaptKind k) {
  switch (k) {
    case AdaptKind::FREEZE: return "freeze";
    case AdaptKind::FULL_FT: return "full_ft";
    case AdaptKind::LORA: return "lora";
    case AdaptKind::ADAPTER: return "adapter";
  }
  return "?";
}

RunMode run_mode_from_string(const std::string& s) {
  if (s == "dparl") return RunMode::DPARL;
  if (s == "dpg_frozen") return RunMode::DPG_FROZEN;
  if (s == "static_pool") return RunMode::STATIC_POOL;
  if (s == "lower_bound") return RunMode::LOWER_BOUND;
  if (s == "upper_bound") return RunMode::UPPER_BOUND;
  if (s == "peft_only") return RunMode::PEFT_ONLY;
  throw std::invalid_argument(
      "unknown mode '" + s +
      "' (dparl|dpg_frozen|static_pool|lower_bound|upper_bound|peft_only)");
}

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::DPARL: return "dparl";
    case RunMode::DPG_FROZEN: return "dpg_frozen";
    case RunMode::STATIC_POOL: return "static_pool";
    case RunMode::LOWER_BOUND: return "lower_bound";
    case RunMode::UPPER_BOUND: return "upper_bound";
    case RunMode::PEFT_ONLY: return "peft_only";
  }
  return "?";
}

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::STAGE_TOKEN: return "stage_token";
    case ParamGroup::MAPPING: return "mapping";
    case ParamGroup::BACKBONE_ADAPT: return "backbone_adapt";
    case ParamGroup::LOSS_PROTOTYPES: return "loss_prototypes";
    case ParamGroup::FROZEN_BASE: return "frozen_base";
    case ParamGroup::FROZEN_ENCODER: return "frozen_encoder";
  }
  return "?";
}

std::shared_ptr<LoraPair> make_lora_pair(std::size_t width, std::size_t heads, std::size_t rank,
                                         double alpha, Rng& rng) {
  if (rank == 0 || rank > width)
    throw std::invalid_argument("make_lora_pair: rank " + std::to_string(rank) +
                                " outside [1, " + std::to_string(width) + "]");
  auto pair = std::make_shared<LoraPair>();
  pair->rank = rank;
  pair->alpha = alpha;
  pair->down = Tensor::randn({width, rank}, rng, 0.02);
  const std::size_t d = width / heads;
  for (std::size_t h = 0; h < heads; ++h) pair->up.push_back(Tensor::zeros({rank, d}));
  return pair;
}

void apply_lora(MiniViT& vit, std::size_t rank, double alpha, Rng& rng) {
  for (auto& blk : vit.blocks) {
    if (blk.attn.lora_q || blk.attn.lora_v)
      throw std::runtime_error("apply_lora: block already adapted");
    blk.attn.lora_q = make_lora_pair(vit.geo.width, vit.geo.heads, rank, alpha, rng);
    blk.attn.lora_v = make_lora_pair(vit.geo.width, vit.geo.heads, rank, alpha, rng);
  }
}

std::size_t lora_param_count(std::size_t depth, std::size_t width, std::size_t rank) {
  return depth * 2 * 2 * width * rank;
}

void apply_adapter(MiniViT& vit, std::size_t bottleneck, Rng& rng) {
  if (bottleneck == 0) throw std::invalid_argument("apply_adapter: bottleneck must be positive");
  for (auto& blk : vit.blocks) {
    if (blk.adapter) throw std::runtime_error("apply_adapter: block already adapted");
    auto ad = std::make_shared<Adapter>();
    ad->down = make_linear(vit.geo.width, bottleneck, rng);
    ad->up = make_linear(bottleneck, vit.geo.width, rng, 0.0, /*zero_weight=*/true);
    blk.adapter = ad;
  }
}

std::size_t adapter_param_count(std::size_t depth, std::size_t width, std::size_t bottleneck) {
  return depth * (2 * width * bottleneck + bottleneck + width);
}

std::size_t ParameterRegistry::learnable_params() const {
  std::size_t n = 0;
  for (const auto& e : entries)
    if (e.learnable) n += e.tensor.size();
  return n;
}

std::size_t ParameterRegistry::total_params() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.tensor.size();
  return n;
}

const RegistryEntry& ParameterRegistry::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw std::invalid_argument("registry: no entry named '" + name + "'");
}

void ParameterRegistry::zero_grads() {
  for (auto& e : entries)
    if (e.learnable) e.tensor.zero_grad();
}

void visit_params(ModelBundle& bundle, const ParamVisitor& fn) {
  visit_params(bundle.backbone, "backbone", fn);
  if (bundle.encoder) visit_params(*bundle.encoder, "encoder", fn);
  visit_params(bundle.queue, "queue", fn);
  if (bundle.mapping) visit_params(*bundle.mapping, "mapping", fn);
  if (bundle.pool) visit_params(*bundle.pool, "pool", fn);
  if (bundle.bank.rows() > 0) visit_params(bundle.bank, "loss", fn);
}

ParameterRegistry partition_parameters(ModelBundle& bundle) {
  ParameterRegistry reg;
  const bool train_nothing = bundle.mode == RunMode::LOWER_BOUND;
  const AdaptKind kind = bundle.adaptation.kind;

  visit_params(bundle.backbone, "backbone", [&](const std::string& name, Tensor& t) {
    const bool is_lora = name.find("/lora_") != std::string::npos;
    const bool is_adapter = name.find("/adapter/") != std::string::npos;
    bool learnable = false;
    switch (kind) {
      case AdaptKind::FREEZE: learnable = false; break;
      case AdaptKind::FULL_FT: learnable = true; break;
      case AdaptKind::LORA: learnable = is_lora; break;
      case AdaptKind::ADAPTER: learnable = is_adapter; break;
    }
    const ParamGroup group = learnable ? ParamGroup::BACKBONE_ADAPT : ParamGroup::FROZEN_BASE;
    reg.entries.push_back({name, t, learnable, group});
  });
  if (bundle.encoder)
    visit_params(*bundle.encoder, "encoder", [&](const std::string& name, Tensor& t) {
      reg.entries.push_back({name, t, false, ParamGroup::FROZEN_ENCODER});
    });
  for (auto& tok : bundle.queue.tokens)
    reg.entries.push_back({"queue/token" + std::to_string(tok.stage), tok.token, !tok.frozen,
                           ParamGroup::STAGE_TOKEN});
  if (bundle.mapping)
    visit_params(*bundle.mapping, "mapping", [&](const std::string& name, Tensor& t) {
      reg.entries.push_back({name, t, true, ParamGroup::MAPPING});
    });
  if (bundle.pool)
    // the pool is the static baseline's prompt-producing machinery, so its
    // parameters take the mapping slot
    visit_params(*bundle.pool, "pool", [&](const std::string& name, Tensor& t) {
      reg.entries.push_back({name, t, true, ParamGroup::MAPPING});
    });
  if (bundle.bank.rows() > 0)
    reg.entries.push_back(
        {"loss/prototypes", bundle.bank.prototypes, true, ParamGroup::LOSS_PROTOTYPES});

  std::set<std::string> names;
  for (auto& e : reg.entries) {
    if (!names.insert(e.name).second)
      throw std::runtime_error("partition_parameters: duplicate entry '" + e.name + "'");
    if (train_nothing) e.learnable = false;
    e.tensor.set_requires_grad(e.learnable);
  }
  return reg;
}

}  // namespace owcl
