#pragma once

#include <optional>
#include <string>
#include <vector>

#include "owcl/dpg.hpp"
#include "owcl/loss.hpp"
#include "owcl/nn.hpp"

namespace owcl {

enum class AdaptKind { FREEZE, FULL_FT, LORA, ADAPTER };

AdaptKind adapt_kind_from_string(const std::string& s);
std::string to_string(AdaptKind k);

struct AdaptationMode {
  AdaptKind kind = AdaptKind::LORA;
  std::size_t lora_rank = 2;
  double lora_alpha = 4.0;  // default 2 * rank
  std::size_t adapter_bottleneck = 12;
};

std::shared_ptr<LoraPair> make_lora_pair(std::size_t width, std::size_t heads, std::size_t rank,
                                         double alpha, Rng& rng);

// Attaches low-rank deltas to the q and v projections of every block.
// up blocks are zero-init, so the adapted forward is bitwise-transparent.
void apply_lora(MiniViT& vit, std::size_t rank, double alpha, Rng& rng);

// depth * 2 targets * 2 factors * C * r
std::size_t lora_param_count(std::size_t depth, std::size_t width, std::size_t rank);

// Attaches a parallel bottleneck adapter to every block; up is zero-init.
void apply_adapter(MiniViT& vit, std::size_t bottleneck, Rng& rng);

// per block: 2*C*b + b + C (both linears' weights, plus both biases)
std::size_t adapter_param_count(std::size_t depth, std::size_t width, std::size_t bottleneck);

enum class RunMode { DPARL, DPG_FROZEN, STATIC_POOL, LOWER_BOUND, UPPER_BOUND, PEFT_ONLY };

RunMode run_mode_from_string(const std::string& s);
std::string to_string(RunMode m);

// Everything one experiment owns. Which optional parts exist depends on mode:
// dpg modes use encoder+queue+mapping, the static baseline uses encoder+pool,
// PEFT_ONLY and LOWER_BOUND run the bare backbone.
struct ModelBundle {
  RunMode mode = RunMode::DPARL;
  AdaptationMode adaptation;
  MiniViT backbone;
  std::optional<MiniViT> encoder;  // always frozen
  StageTokenQueue queue;
  std::optional<LowRankMap> mapping;
  std::optional<StaticPromptPool> pool;
  PromptLayout layout;
  PrototypeBank bank;
};

enum class ParamGroup {
  STAGE_TOKEN,
  MAPPING,
  BACKBONE_ADAPT,
  LOSS_PROTOTYPES,
  FROZEN_BASE,
  FROZEN_ENCODER,
};

std::string to_string(ParamGroup g);

struct RegistryEntry {
  std::string name;
  Tensor tensor;
  bool learnable = false;
  ParamGroup group = ParamGroup::FROZEN_BASE;
};

struct ParameterRegistry {
  std::vector<RegistryEntry> entries;  // deterministic construction order

  std::size_t learnable_params() const;
  std::size_t total_params() const;
  const RegistryEntry& find(const std::string& name) const;
  void zero_grads();
};

// Walks every tensor in the bundle exactly once, assigns (group, learnable)
// per mode/adaptation, and stamps requires_grad = learnable on each tensor.
// Frozen after this call: previous stage tokens, the encoder, and the base
// backbone unless FULL_FT; LOWER_BOUND freezes everything.
ParameterRegistry partition_parameters(ModelBundle& bundle);

void visit_params(ModelBundle& bundle, const ParamVisitor& fn);

}  // namespace owcl
