#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "owcl/rng.hpp"
#include "owcl/tensor.hpp"

namespace owcl {

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, double sigma = 0.02,
                   bool zero_weight = false);
Tensor linear(const Tensor& x, const Linear& l);

// Low-rank delta for one attention projection: W_eff = W + (alpha/r) down.up_h.
// The down map is shared across heads; each head owns its up block, zero-init
// so the adapted model starts exactly at the base model.
struct LoraPair {
  Tensor down;             // [C, r]
  std::vector<Tensor> up;  // per head [r, d]
  std::size_t rank = 0;
  double alpha = 0.0;
};

// Bottleneck module parallel to the MLP sublayer; up is zero-init.
struct Adapter {
  Linear down;  // [C, b]
  Linear up;    // [b, C]
};

struct MultiHeadAttention {
  std::size_t width = 0, heads = 0;
  std::vector<Tensor> wq, wk, wv;  // per head [C, d], d = C/heads
  Linear out;                      // [C, C]
  std::shared_ptr<LoraPair> lora_q, lora_v;
};

// Token-space prefix for one layer, pre-projection (Eq.-style prefix tuning):
// keys/values are concatenated to the token sequence before W_k / W_v apply.
struct LayerPrefix {
  Tensor keys;    // [N/2, C]
  Tensor values;  // [N/2, C]
};

using PrefixMap = std::map<std::size_t, LayerPrefix>;

struct TransformerBlock {
  Tensor ln1_gamma, ln1_beta;
  MultiHeadAttention attn;
  Tensor ln2_gamma, ln2_beta;
  Linear fc1, fc2;
  std::shared_ptr<Adapter> adapter;
};

struct VitGeometry {
  std::size_t image_side = 32;
  std::size_t patch = 8;
  std::size_t width = 48;
  std::size_t heads = 4;
  std::size_t depth = 4;
  std::size_t mlp_ratio = 4;

  std::size_t patch_tokens() const { return (image_side / patch) * (image_side / patch); }
};

struct MiniViT {
  VitGeometry geo;
  Linear patch_embed;  // [patch^2, C]
  Tensor cls_token;    // [1, C]
  Tensor pos_embed;    // [1 + patch_tokens, C]
  std::vector<TransformerBlock> blocks;
  Tensor lnf_gamma, lnf_beta;
};

MiniViT make_vit(const VitGeometry& geo, Rng& rng);

// Row-major [T, patch^2] patch grid; pure data movement, images carry no grad.
Tensor patchify(const Tensor& image, std::size_t patch);

// h_i = Attention(x Wq_i, [P_k; x] Wk_i, [P_v; x] Wv_i), scale 1/sqrt(d).
// Queries are never prefixed. prefix == nullptr is the vanilla path and is
// bitwise identical to a zero-row prefix.
Tensor attention_with_prefix(const Tensor& x, const MultiHeadAttention& mha,
                             const LayerPrefix* prefix);

// Pre-norm block: x + Attn(LN1(x)); then h + MLP(LN2(h)) [+ Adapter(LN2(h))].
Tensor block_forward(const Tensor& x, const TransformerBlock& blk, const LayerPrefix* prefix);

struct VitOutput {
  Tensor cls;     // [1, C] final-layer CLS
  Tensor tokens;  // [T_total, C] all final-layer tokens
};

// Token layout: [CLS; patches] + positional embedding, then extra_tokens
// appended with no positional embedding. prefixes maps block index -> prefix;
// blocks absent from the map run vanilla attention. applied_layers, when
// given, records which blocks consumed a prefix.
VitOutput vit_forward(const MiniViT& vit, const Tensor& image,
                      const PrefixMap* prefixes = nullptr,
                      const Tensor* extra_tokens = nullptr,
                      std::vector<bool>* applied_layers = nullptr);

void visit_params(Linear& l, const std::string& prefix, const ParamVisitor& fn);
void visit_params(MultiHeadAttention& mha, const std::string& prefix, const ParamVisitor& fn);
void visit_params(TransformerBlock& blk, const std::string& prefix, const ParamVisitor& fn);
void visit_params(MiniViT& vit, const std::string& prefix, const ParamVisitor& fn);

std::size_t param_count(MiniViT& vit);

}  // namespace owcl
