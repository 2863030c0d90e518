#include <benchmark/benchmark.h>

#include "owcl/dpg.hpp"
#include "owcl/eval.hpp"
#include "owcl/nn.hpp"
#include "owcl/rng.hpp"
#include "owcl/tensor.hpp"

using namespace owcl;

namespace {

// The benchmark suite mirrors the desk-scale hot path: f64 matmul (the
// kernel), attention with/without prompt prefixes, the full backbone forward,
// prompt generation, and the per-stage retrieval evaluation.

MiniViT desk_vit() {
  Rng rng(7);
  return make_vit(VitGeometry{}, rng);  // 32x32/8, width 48, 4 heads, depth 4
}

}  // namespace

static void BM_matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::randn({n, n}, rng);
  Tensor b = Tensor::randn({n, n}, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.raw());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(32)->Arg(64)->Arg(128);

static void BM_matmul_backward(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::randn({n, n}, rng);
  Tensor b = Tensor::randn({n, n}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(matmul(a, b)));
  }
  state.SetItemsProcessed(state.iterations() * 6 * n * n * n);
}
BENCHMARK(BM_matmul_backward)->Arg(32)->Arg(64);

static void BM_attention_forward(benchmark::State& state) {
  const MiniViT vit = desk_vit();
  Rng rng(2);
  Tensor x = Tensor::randn({17, vit.geo.width}, rng);  // CLS + 16 patch tokens
  for (auto _ : state) {
    Tensor y = attention_with_prefix(x, vit.blocks[0].attn, nullptr);
    benchmark::DoNotOptimize(y.raw());
  }
}
BENCHMARK(BM_attention_forward);

static void BM_attention_prefix_forward(benchmark::State& state) {
  const MiniViT vit = desk_vit();
  Rng rng(2);
  Tensor x = Tensor::randn({17, vit.geo.width}, rng);
  const LayerPrefix prefix{Tensor::randn({4, vit.geo.width}, rng),
                           Tensor::randn({4, vit.geo.width}, rng)};
  for (auto _ : state) {
    Tensor y = attention_with_prefix(x, vit.blocks[0].attn, &prefix);
    benchmark::DoNotOptimize(y.raw());
  }
}
BENCHMARK(BM_attention_prefix_forward);

static void BM_attention_backward(benchmark::State& state) {
  const MiniViT vit = desk_vit();
  Rng rng(2);
  Tensor x = Tensor::randn({17, vit.geo.width}, rng);
  x.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(attention_with_prefix(x, vit.blocks[0].attn, nullptr)));
  }
}
BENCHMARK(BM_attention_backward);

static void BM_vit_forward(benchmark::State& state) {
  const MiniViT vit = desk_vit();
  Rng rng(3);
  Tensor image = Tensor::randn({vit.geo.image_side, vit.geo.image_side}, rng);
  for (auto _ : state) {
    VitOutput out = vit_forward(vit, image);
    benchmark::DoNotOptimize(out.cls.raw());
  }
}
BENCHMARK(BM_vit_forward);

static void BM_vit_forward_prompted(benchmark::State& state) {
  const MiniViT vit = desk_vit();
  Rng rng(3);
  Tensor image = Tensor::randn({vit.geo.image_side, vit.geo.image_side}, rng);
  const PromptLayout layout{8, vit.geo.width, 3};
  PromptTensor prompts{layout, Tensor::randn({layout.n_p, layout.width, layout.layers}, rng)};
  const PrefixMap prefixes = prompt_prefix_map(prompts);
  for (auto _ : state) {
    VitOutput out = vit_forward(vit, image, &prefixes);
    benchmark::DoNotOptimize(out.cls.raw());
  }
}
BENCHMARK(BM_vit_forward_prompted);

static void BM_generate_prompts(benchmark::State& state) {
  Rng rng(4);
  DpgNetwork net{desk_vit(), StageTokenQueue{}, LowRankMap{}, PromptLayout{}};
  net.layout.width = net.encoder.geo.width;
  net.queue.width = net.encoder.geo.width;
  Rng evict(5);
  for (std::size_t stage = 1; stage <= 5; ++stage) queue_advance(net.queue, stage, rng, evict);
  net.mapping = make_low_rank_map(net.encoder.geo.width, net.layout.flat(), 16, 0.1, rng);
  Tensor image = Tensor::randn({net.encoder.geo.image_side, net.encoder.geo.image_side}, rng);
  Rng dropout(6);
  for (auto _ : state) {
    PromptTensor p = generate_prompts(net, image, false, dropout);
    benchmark::DoNotOptimize(p.flat.raw());
  }
}
BENCHMARK(BM_generate_prompts);

// The per-stage evaluation workload: leave-one-out recall over the unseen
// test split (60 classes x 20 samples at desk scale).
static void BM_recall_at_1(benchmark::State& state) {
  const std::size_t classes = 60, per_class = 20, dim = 48;
  Rng rng(8);
  Tensor emb = Tensor::randn({classes * per_class, dim}, rng);
  std::vector<std::uint64_t> labels;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t s = 0; s < per_class; ++s) labels.push_back(c);
  const EmbeddingSet set =
      make_embedding_set(std::move(emb), std::move(labels), EmbeddingSource::UNIFIED);
  for (auto _ : state) {
    double r = recall_at_1(set);
    benchmark::DoNotOptimize(r);
  }
}
BENCHMARK(BM_recall_at_1);

static void BM_distance_histogram(benchmark::State& state) {
  const std::size_t classes = 60, per_class = 20, dim = 48;
  Rng rng(8);
  Tensor emb = Tensor::randn({classes * per_class, dim}, rng);
  std::vector<std::uint64_t> labels;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t s = 0; s < per_class; ++s) labels.push_back(c);
  const EmbeddingSet set =
      make_embedding_set(std::move(emb), std::move(labels), EmbeddingSource::UNIFIED);
  for (auto _ : state) {
    HistogramReport rep = distance_histogram(set, 32);
    benchmark::DoNotOptimize(rep.mean_gap);
  }
}
BENCHMARK(BM_distance_histogram);

BENCHMARK_MAIN();
