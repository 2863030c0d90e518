#include "owcl/dpg.hpp"

#include <algorithm>

namespace owcl {

QueuePolicy queue_policy_from_string(const std::string& s) {
  if (s == "fifo") return QueuePolicy::FIFO;
  if (s == "filo") return QueuePolicy::FILO;
  if (s == "random") return QueuePolicy::RANDOM;
  throw std::invalid_argument("unknown queue policy '" + s + "' (fifo|filo|random)");
}

std::string to_string(QueuePolicy p) {
  switch (p) {
    case QueuePolicy::FIFO: return "fifo";
    case QueuePolicy::FILO: return "filo";
    case QueuePolicy::RANDOM: return "random";
  }
  return "?";
}

void queue_advance(StageTokenQueue& q, std::size_t stage, Rng& init_rng, Rng& evict_rng) {
  if (q.capacity == 0) return;
  if (q.width == 0) throw std::invalid_argument("queue_advance: width not set");
  for (auto& t : q.tokens) {
    if (t.stage >= stage)
      throw std::invalid_argument("queue_advance: stage " + std::to_string(stage) +
                                  " not newer than queued stage " + std::to_string(t.stage));
    t.frozen = true;
  }
  StageToken fresh;
  fresh.stage = stage;
  fresh.token = Tensor::randn({1, q.width}, init_rng, 0.02);
  fresh.frozen = false;
  q.tokens.push_back(std::move(fresh));
  if (q.tokens.size() > q.capacity) {
    // evict among previous tokens only; the fresh token is the last entry
    const std::size_t prev = q.tokens.size() - 1;
    std::size_t victim = 0;
    switch (q.policy) {
      case QueuePolicy::FIFO: {
        victim = 0;
        for (std::size_t i = 1; i < prev; ++i)
          if (q.tokens[i].stage < q.tokens[victim].stage) victim = i;
        break;
      }
      case QueuePolicy::FILO: {
        victim = 0;
        for (std::size_t i = 1; i < prev; ++i)
          if (q.tokens[i].stage > q.tokens[victim].stage) victim = i;
        break;
      }
      case QueuePolicy::RANDOM:
        victim = evict_rng.uniform_int(prev);
        break;
    }
    q.tokens.erase(q.tokens.begin() + static_cast<std::ptrdiff_t>(victim));
  }
}

void queue_freeze_all(StageTokenQueue& q) {
  for (auto& t : q.tokens) t.frozen = true;
}

Tensor queue_tokens(const StageTokenQueue& q) {
  if (q.tokens.empty()) return Tensor::zeros({0, q.width});
  Tensor out = q.tokens[0].token;
  for (std::size_t i = 1; i < q.tokens.size(); ++i) out = concat_rows(out, q.tokens[i].token);
  return out;
}

LowRankMap make_low_rank_map(std::size_t c_in, std::size_t c_out, std::size_t rank,
                             double dropout_p, Rng& rng) {
  if (rank < 1 || rank > std::min(c_in, c_out))
    throw std::invalid_argument("make_low_rank_map: rank " + std::to_string(rank) +
                                " outside [1, min(" + std::to_string(c_in) + "," +
                                std::to_string(c_out) + ")]");
  LowRankMap m;
  m.c_in = c_in;
  m.c_out = c_out;
  m.rank = rank;
  m.dropout_p = dropout_p;
  m.A = Tensor::randn({c_in, rank}, rng, 0.02);
  m.B = Tensor::randn({c_out, rank}, rng, 0.02);
  m.ln_gamma = Tensor::full({c_out}, 1.0);
  m.ln_beta = Tensor::zeros({c_out});
  return m;
}

Tensor mapping_forward(const LowRankMap& map, const Tensor& x, bool training, Rng& dropout_rng) {
  if (x.cols() != map.c_in)
    throw std::invalid_argument("mapping_forward: input " + shape_str(x.shape()) +
                                " does not match C_in " + std::to_string(map.c_in));
  Tensor d = dropout(x, map.dropout_p, training, dropout_rng);
  Tensor pre = matmul_nt(matmul(d, map.A), map.B);  // (x A) B^T
  return layernorm_rows(pre, map.ln_gamma, map.ln_beta);
}

std::vector<double> materialize_mapping(const LowRankMap& map) {
  std::vector<double> w(map.c_in * map.c_out, 0.0);
  for (std::size_t i = 0; i < map.c_in; ++i)
    for (std::size_t j = 0; j < map.c_out; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < map.rank; ++r)
        acc += map.A.raw()[i * map.rank + r] * map.B.raw()[j * map.rank + r];
      w[i * map.c_out + j] = acc;
    }
  return w;
}

std::size_t count_mapping_params(std::size_t c_in, std::size_t c_out, std::size_t rank,
                                 ParamConvention conv) {
  if (conv == ParamConvention::PAPER) return rank * c_out;
  return rank * (c_in + c_out) + 2 * c_out;
}

LayerPrefix prompt_layer(const PromptTensor& p, std::size_t layer) {
  const std::size_t N = p.layout.n_p, C = p.layout.width, L = p.layout.layers;
  if (layer >= L)
    throw std::invalid_argument("prompt_layer: layer " + std::to_string(layer) + " >= " +
                                std::to_string(L));
  std::vector<std::size_t> idx(N * C);
  for (std::size_t pi = 0; pi < N; ++pi)
    for (std::size_t c = 0; c < C; ++c) idx[pi * C + c] = (pi * C + c) * L + layer;
  Tensor per_layer = reshape(take(p.flat, std::move(idx)), {N, C});
  LayerPrefix out;
  out.keys = slice_rows(per_layer, 0, N / 2);
  out.values = slice_rows(per_layer, N / 2, N);
  return out;
}

PrefixMap prompt_prefix_map(const PromptTensor& p) {
  PrefixMap m;
  for (std::size_t l = 0; l < p.layout.layers; ++l) m.emplace(l, prompt_layer(p, l));
  return m;
}

namespace {
void check_layout(const PromptLayout& layout) {
  if (layout.n_p == 0 || layout.n_p % 2 != 0)
    throw std::invalid_argument("prompt layout: N_p must be positive and even, got " +
                                std::to_string(layout.n_p));
  if (layout.width == 0 || layout.layers == 0)
    throw std::invalid_argument("prompt layout: width and layers must be positive");
}
}  // namespace

PromptTensor generate_prompts(const DpgNetwork& dpg, const Tensor& image, bool training,
                              Rng& dropout_rng) {
  check_layout(dpg.layout);
  if (dpg.layout.flat() != dpg.mapping.c_out)
    throw std::invalid_argument("generate_prompts: layout flat size " +
                                std::to_string(dpg.layout.flat()) + " != mapping C_out " +
                                std::to_string(dpg.mapping.c_out));
  Tensor extra = queue_tokens(dpg.queue);
  VitOutput enc = vit_forward(dpg.encoder, image, nullptr, &extra);
  Tensor mapped = mapping_forward(dpg.mapping, enc.cls, training, dropout_rng);
  return PromptTensor{dpg.layout,
                      reshape(mapped, {dpg.layout.n_p, dpg.layout.width, dpg.layout.layers})};
}

StaticPromptPool make_static_pool(std::size_t pool_size, std::size_t c_query,
                                  const PromptLayout& layout, Rng& rng) {
  check_layout(layout);
  if (pool_size == 0) throw std::invalid_argument("make_static_pool: pool_size must be positive");
  StaticPromptPool p;
  p.pool_size = pool_size;
  p.layout = layout;
  p.keys = Tensor::randn({pool_size, c_query}, rng, 0.02);
  p.components = Tensor::randn({pool_size, layout.flat()}, rng, 0.02);
  return p;
}

PromptTensor pool_combine(const StaticPromptPool& pool, const Tensor& query) {
  if (query.rows() != 1 || query.cols() != pool.keys.cols())
    throw std::invalid_argument("pool_combine: query " + shape_str(query.shape()) +
                                " does not match keys " + shape_str(pool.keys.shape()));
  Tensor cos = matmul_nt(l2_normalize_rows(query), l2_normalize_rows(pool.keys));
  Tensor weights = softmax_rows(cos);  // [1, M]
  Tensor combined = matmul(weights, pool.components);
  return PromptTensor{pool.layout, reshape(combined, {pool.layout.n_p, pool.layout.width,
                                                      pool.layout.layers})};
}

void visit_params(StageTokenQueue& q, const std::string& prefix, const ParamVisitor& fn) {
  for (auto& t : q.tokens) fn(prefix + "/token" + std::to_string(t.stage), t.token);
}

void visit_params(LowRankMap& m, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "/A", m.A);
  fn(prefix + "/B", m.B);
  fn(prefix + "/ln/gamma", m.ln_gamma);
  fn(prefix + "/ln/beta", m.ln_beta);
}

void visit_params(StaticPromptPool& p, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "/keys", p.keys);
  fn(prefix + "/components", p.components);
}

}  // namespace owcl
