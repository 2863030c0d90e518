#pragma once

#include <cstdint>
#include <vector>

#include "owcl/tensor.hpp"

namespace owcl {

enum class EmbeddingSource { QUERY, GALLERY, UNIFIED };

struct EmbeddingSet {
  Tensor embeddings;  // [n, C]
  std::vector<std::uint64_t> labels;
  EmbeddingSource source = EmbeddingSource::UNIFIED;

  std::size_t size() const { return labels.size(); }
};

EmbeddingSet make_embedding_set(Tensor embeddings, std::vector<std::uint64_t> labels,
                                EmbeddingSource source = EmbeddingSource::UNIFIED);

struct RecallStats {
  std::size_t hits = 0;
  std::size_t queries = 0;  // denominator, after skipping
  std::size_t skipped = 0;  // queries with no same-class partner
};

// Leave-one-out Recall@1 over a unified set: each sample queries all others,
// hit iff the nearest other sample (squared L2, ties to the lower index)
// shares its label. Queries whose class has no second sample are skipped and
// leave the denominator. Parallel over queries, capped by OWCL_THREADS;
// results are bitwise independent of the thread count.
double recall_at_1(const EmbeddingSet& unified, RecallStats* stats = nullptr);

// Query/gallery mode (separate sets, no self-exclusion).
double recall_at_1(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                   RecallStats* stats = nullptr);

// F_N = (1/(N_s-1)) sum_{n=2..N_s} max_{m<n} max(0, R_m - R_n)
double forgetting(const std::vector<double>& recalls);

double avg_recall(const std::vector<double>& recalls);

struct HistogramReport {
  std::vector<double> intra;  // pairwise L2, same class, (i<j) row-major order
  std::vector<double> inter;  // pairwise L2, different class
  std::vector<double> bin_edges;
  std::vector<std::size_t> intra_counts;
  std::vector<std::size_t> inter_counts;
  double mean_intra = 0.0;
  double mean_inter = 0.0;
  double mean_gap = 0.0;  // mean(inter) - mean(intra)
};

HistogramReport distance_histogram(const EmbeddingSet& set, std::size_t bins);

// Evaluation worker cap: OWCL_THREADS if set, else hardware concurrency.
std::size_t eval_threads();

// Deterministic chunked map: fn(i) must touch only its own slot.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace owcl
