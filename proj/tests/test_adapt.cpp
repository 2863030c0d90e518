#include <doctest.h>

#include <map>
#include <set>

#include "owcl/adapt.hpp"

using namespace owcl;

namespace {

VitGeometry tiny_geo() {
  VitGeometry g;
  g.image_side = 16;
  g.patch = 8;
  g.width = 12;
  g.heads = 3;
  g.depth = 2;
  g.mlp_ratio = 2;
  return g;
}

// DPARL-shaped bundle on the tiny geometry, advanced to stage 2.
ModelBundle make_bundle(RunMode mode, AdaptKind kind) {
  Rng rng(41);
  ModelBundle b;
  b.mode = mode;
  b.adaptation.kind = kind;
  b.backbone = make_vit(tiny_geo(), rng);
  if (kind == AdaptKind::LORA)
    apply_lora(b.backbone, b.adaptation.lora_rank, b.adaptation.lora_alpha, rng);
  if (kind == AdaptKind::ADAPTER) apply_adapter(b.backbone, b.adaptation.adapter_bottleneck, rng);
  b.encoder = make_vit(tiny_geo(), rng);
  b.layout = PromptLayout{4, 12, 2};
  b.queue.capacity = 3;
  b.queue.width = 12;
  Rng evict(1);
  queue_advance(b.queue, 1, rng, evict);
  queue_advance(b.queue, 2, rng, evict);
  b.mapping = make_low_rank_map(12, b.layout.flat(), 4, 0.1, rng);
  b.bank = make_bank(12);
  bank_extend(b.bank, {3, 4}, 1, rng);
  return b;
}

}  // namespace

TEST_CASE("apply_lora: zero-init up keeps the forward bitwise identical") {
  Rng rng(7);
  MiniViT vit = make_vit(tiny_geo(), rng);
  Tensor img = Tensor::randn({16, 16}, rng);
  VitOutput base = vit_forward(vit, img);
  const std::vector<double> cls0 = base.cls.values();
  const std::vector<double> tok0 = base.tokens.values();

  apply_lora(vit, 2, 4.0, rng);
  VitOutput adapted = vit_forward(vit, img);
  REQUIRE(adapted.cls.size() == cls0.size());
  for (std::size_t i = 0; i < cls0.size(); ++i) CHECK(adapted.cls.values()[i] == cls0[i]);
  for (std::size_t i = 0; i < tok0.size(); ++i) CHECK(adapted.tokens.values()[i] == tok0[i]);
  CHECK_THROWS_AS(apply_lora(vit, 2, 4.0, rng), std::runtime_error);
}

TEST_CASE("apply_adapter: zero-init up keeps the forward bitwise identical") {
  Rng rng(8);
  MiniViT vit = make_vit(tiny_geo(), rng);
  Tensor img = Tensor::randn({16, 16}, rng);
  const std::vector<double> cls0 = vit_forward(vit, img).cls.values();

  apply_adapter(vit, 5, rng);
  const std::vector<double> cls1 = vit_forward(vit, img).cls.values();
  for (std::size_t i = 0; i < cls0.size(); ++i) CHECK(cls1[i] == cls0[i]);
  CHECK_THROWS_AS(apply_adapter(vit, 5, rng), std::runtime_error);
}

TEST_CASE("lora: tensor sizes at the 12-layer/768-wide reference point sum to 73728") {
  Rng rng(1);
  std::size_t total = 0;
  for (std::size_t layer = 0; layer < 12; ++layer) {
    for (int target = 0; target < 2; ++target) {  // q and v
      auto pair = make_lora_pair(768, 12, 2, 4.0, rng);
      total += pair->down.size();
      for (const auto& up : pair->up) total += up.size();
    }
  }
  CHECK(total == 73728);
  CHECK(lora_param_count(12, 768, 2) == 73728);
  // table row deltas: rank 2/4/8 scale linearly
  CHECK(lora_param_count(12, 768, 4) == 147456);
  CHECK(lora_param_count(12, 768, 8) == 294912);
}

TEST_CASE("adapter: structural count matches the closed form") {
  Rng rng(2);
  MiniViT vit = make_vit(tiny_geo(), rng);
  apply_adapter(vit, 5, rng);
  std::size_t total = 0;
  for (const auto& blk : vit.blocks) {
    total += blk.adapter->down.weight.size() + blk.adapter->down.bias.size();
    total += blk.adapter->up.weight.size() + blk.adapter->up.bias.size();
  }
  CHECK(total == adapter_param_count(2, 12, 5));
  CHECK(adapter_param_count(2, 12, 5) == 2 * (2 * 12 * 5 + 5 + 12));
}

TEST_CASE("make_lora_pair: rank guards") {
  Rng rng(3);
  CHECK_THROWS_AS(make_lora_pair(12, 3, 0, 4.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(make_lora_pair(12, 3, 13, 4.0, rng), std::invalid_argument);
  MiniViT dummy;
  CHECK_THROWS_AS(apply_adapter(dummy, 0, rng), std::invalid_argument);
}

TEST_CASE("partition: registry covers visit_params(bundle) exactly once, storage-identical") {
  ModelBundle b = make_bundle(RunMode::DPARL, AdaptKind::LORA);
  ParameterRegistry reg = partition_parameters(b);

  std::map<std::string, Tensor> visited;
  visit_params(b, [&](const std::string& name, Tensor& t) {
    CHECK(visited.emplace(name, t).second);  // visitor itself never repeats a name
  });
  REQUIRE(reg.entries.size() == visited.size());
  std::set<std::string> reg_names;
  for (const auto& e : reg.entries) {
    CHECK(reg_names.insert(e.name).second);
    auto it = visited.find(e.name);
    REQUIRE(it != visited.end());
    CHECK(e.tensor.same_storage(it->second));
  }
}

TEST_CASE("partition: dparl + lora trains exactly tokens|mapping|lora|prototypes") {
  ModelBundle b = make_bundle(RunMode::DPARL, AdaptKind::LORA);
  ParameterRegistry reg = partition_parameters(b);

  for (const auto& e : reg.entries) {
    const bool is_lora = e.name.find("/lora_") != std::string::npos;
    if (e.name.rfind("backbone/", 0) == 0) {
      CHECK(e.learnable == is_lora);
      CHECK(e.group == (is_lora ? ParamGroup::BACKBONE_ADAPT : ParamGroup::FROZEN_BASE));
    } else if (e.name.rfind("encoder/", 0) == 0) {
      CHECK(!e.learnable);
      CHECK(e.group == ParamGroup::FROZEN_ENCODER);
    } else if (e.name.rfind("mapping/", 0) == 0) {
      CHECK(e.learnable);
      CHECK(e.group == ParamGroup::MAPPING);
    }
    CHECK(e.tensor.requires_grad() == e.learnable);
  }
  CHECK(reg.find("queue/token1").learnable == false);
  CHECK(reg.find("queue/token1").group == ParamGroup::STAGE_TOKEN);
  CHECK(reg.find("queue/token2").learnable == true);
  CHECK(reg.find("loss/prototypes").group == ParamGroup::LOSS_PROTOTYPES);
  CHECK(reg.find("loss/prototypes").learnable == true);
  CHECK_THROWS_AS(reg.find("no/such/param"), std::invalid_argument);

  // closed-form learnable budget: lora + mapping(A,B,ln) + current token + bank
  const std::size_t mapping_full = 4 * (12 + b.layout.flat()) + 2 * b.layout.flat();
  const std::size_t want =
      lora_param_count(2, 12, 2) + mapping_full + 12 + b.bank.prototypes.size();
  CHECK(reg.learnable_params() == want);
}

TEST_CASE("partition: full fine-tuning marks every backbone tensor learnable") {
  ModelBundle b;
  Rng rng(9);
  b.mode = RunMode::PEFT_ONLY;
  b.adaptation.kind = AdaptKind::FULL_FT;
  b.backbone = make_vit(tiny_geo(), rng);
  b.queue.capacity = 0;
  b.queue.width = 12;
  b.bank = make_bank(12);
  bank_extend(b.bank, {1}, 1, rng);
  ParameterRegistry reg = partition_parameters(b);
  CHECK(reg.learnable_params() == param_count(b.backbone) + b.bank.prototypes.size());
  for (const auto& e : reg.entries) CHECK(e.learnable);
}

TEST_CASE("partition: freeze kind trains no backbone tensor") {
  ModelBundle b = make_bundle(RunMode::DPG_FROZEN, AdaptKind::FREEZE);
  ParameterRegistry reg = partition_parameters(b);
  for (const auto& e : reg.entries)
    if (e.name.rfind("backbone/", 0) == 0) {
      CHECK(!e.learnable);
      CHECK(e.group == ParamGroup::FROZEN_BASE);
    }
  CHECK(reg.find("mapping/A").learnable);
  CHECK(reg.find("queue/token2").learnable);
}

TEST_CASE("partition: lower bound freezes absolutely everything") {
  ModelBundle b = make_bundle(RunMode::LOWER_BOUND, AdaptKind::FREEZE);
  ParameterRegistry reg = partition_parameters(b);
  CHECK(reg.learnable_params() == 0);
  for (const auto& e : reg.entries) {
    CHECK(!e.learnable);
    CHECK(!e.tensor.requires_grad());
  }
}

TEST_CASE("partition: static pool parameters land in the mapping group") {
  Rng rng(12);
  ModelBundle b;
  b.mode = RunMode::STATIC_POOL;
  b.adaptation.kind = AdaptKind::FREEZE;
  b.backbone = make_vit(tiny_geo(), rng);
  b.layout = PromptLayout{4, 12, 2};
  b.queue.capacity = 0;
  b.queue.width = 12;
  b.pool = make_static_pool(6, 12, b.layout, rng);
  b.bank = make_bank(12);
  bank_extend(b.bank, {1, 2}, 1, rng);
  ParameterRegistry reg = partition_parameters(b);
  CHECK(reg.find("pool/keys").learnable);
  CHECK(reg.find("pool/keys").group == ParamGroup::MAPPING);
  CHECK(reg.find("pool/components").group == ParamGroup::MAPPING);
  CHECK(reg.learnable_params() ==
        b.pool->keys.size() + b.pool->components.size() + b.bank.prototypes.size());
}

TEST_CASE("registry: zero_grads clears learnable grads only") {
  ModelBundle b = make_bundle(RunMode::DPARL, AdaptKind::LORA);
  ParameterRegistry reg = partition_parameters(b);
  // give the current token a fake grad, then clear
  Tensor tok = reg.find("queue/token2").tensor;
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(tok));
  }
  CHECK(tok.grad()[0] == 1.0);
  reg.zero_grads();
  bool any_nonzero = false;
  for (double g : tok.grad()) any_nonzero |= (g != 0.0);
  CHECK(!any_nonzero);
}

TEST_CASE("mode and kind strings round-trip; unknown strings throw") {
  for (AdaptKind k :
       {AdaptKind::FREEZE, AdaptKind::FULL_FT, AdaptKind::LORA, AdaptKind::ADAPTER})
    CHECK(adapt_kind_from_string(to_string(k)) == k);
  for (RunMode m : {RunMode::DPARL, RunMode::DPG_FROZEN, RunMode::STATIC_POOL,
                    RunMode::LOWER_BOUND, RunMode::UPPER_BOUND, RunMode::PEFT_ONLY})
    CHECK(run_mode_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(adapt_kind_from_string("bitfit"), std::invalid_argument);
  CHECK_THROWS_AS(run_mode_from_string("joint"), std::invalid_argument);
}
