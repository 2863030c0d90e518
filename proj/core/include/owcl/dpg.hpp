#pragma once

#include <string>
#include <vector>

#include "owcl/nn.hpp"
#include "owcl/rng.hpp"
#include "owcl/tensor.hpp"

namespace owcl {

enum class QueuePolicy { FIFO, FILO, RANDOM };

QueuePolicy queue_policy_from_string(const std::string& s);
std::string to_string(QueuePolicy p);

struct StageToken {
  std::size_t stage = 0;  // 1-based stage that created this token
  Tensor token;           // [1, C_enc]
  bool frozen = true;
};

// Bounded queue of per-stage tokens, insertion order preserved. At any time
// at most one token (the current stage's) is trainable.
struct StageTokenQueue {
  std::size_t capacity = 5;
  std::size_t width = 0;
  QueuePolicy policy = QueuePolicy::FIFO;
  std::vector<StageToken> tokens;
};

// Freezes all existing tokens, inserts a fresh trainable token for `stage`,
// then evicts one *previous* token per policy if over capacity. Zero-capacity
// queues stay empty (the no-stage-token ablation).
void queue_advance(StageTokenQueue& q, std::size_t stage, Rng& init_rng, Rng& evict_rng);

void queue_freeze_all(StageTokenQueue& q);

// Tokens stacked in insertion order, [n, C_enc]; tape-aware so the current
// token receives gradients through the encoder.
Tensor queue_tokens(const StageTokenQueue& q);

// Eq.-(1)-style map: LayerNorm(LowRankLinear(DropOut(x))), W = A.B^T.
struct LowRankMap {
  std::size_t c_in = 0, c_out = 0, rank = 0;
  Tensor A;  // [C_in, R]
  Tensor B;  // [C_out, R]
  Tensor ln_gamma, ln_beta;  // [C_out]
  double dropout_p = 0.1;
};

LowRankMap make_low_rank_map(std::size_t c_in, std::size_t c_out, std::size_t rank,
                             double dropout_p, Rng& rng);

Tensor mapping_forward(const LowRankMap& map, const Tensor& x, bool training, Rng& dropout_rng);

// Dense W = A.B^T, row-major [C_in, C_out]; test/verify helper.
std::vector<double> materialize_mapping(const LowRankMap& map);

enum class ParamConvention { FULL, PAPER };

// FULL counts everything the map stores: R(C_in + C_out) + 2 C_out.
// PAPER counts only the expanding factor: R * C_out.
std::size_t count_mapping_params(std::size_t c_in, std::size_t c_out, std::size_t rank,
                                 ParamConvention conv);

struct PromptLayout {
  std::size_t n_p = 8;    // prompt count, split half keys / half values
  std::size_t width = 0;  // backbone width C
  std::size_t layers = 3; // prefixed backbone layers, 0..layers-1

  std::size_t flat() const { return n_p * width * layers; }
};

struct PromptTensor {
  PromptLayout layout;
  Tensor flat;  // [N_p, C, L] row-major
};

// Strided per-layer view: first N_p/2 prompts are keys, second half values.
LayerPrefix prompt_layer(const PromptTensor& p, std::size_t layer);

PrefixMap prompt_prefix_map(const PromptTensor& p);

// The dynamic prompt generation network: frozen encoder + stage token queue
// + trainable low-rank mapping.
struct DpgNetwork {
  MiniViT encoder;
  StageTokenQueue queue;
  LowRankMap mapping;
  PromptLayout layout;
};

// P = Mapping(Encoder([S; I]).cls), reshaped to (N_p, C, L).
PromptTensor generate_prompts(const DpgNetwork& dpg, const Tensor& image, bool training,
                              Rng& dropout_rng);

// CodaPrompt-style static baseline: learned keys select a softmax-weighted
// mix of learned prompt components, conditioned on a frozen query embedding.
struct StaticPromptPool {
  std::size_t pool_size = 0;
  PromptLayout layout;
  Tensor keys;        // [M, C_enc]
  Tensor components;  // [M, N_p*C*L]
};

StaticPromptPool make_static_pool(std::size_t pool_size, std::size_t c_query,
                                  const PromptLayout& layout, Rng& rng);

PromptTensor pool_combine(const StaticPromptPool& pool, const Tensor& query);

void visit_params(StageTokenQueue& q, const std::string& prefix, const ParamVisitor& fn);
void visit_params(LowRankMap& m, const std::string& prefix, const ParamVisitor& fn);
void visit_params(StaticPromptPool& p, const std::string& prefix, const ParamVisitor& fn);

}  // namespace owcl
