#include "owcl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace owcl {

EmbeddingSet make_embedding_set(Tensor embeddings, std::vector<std::uint64_t> labels,
                                EmbeddingSource source) {
  if (embeddings.ndim() != 2)
    throw std::invalid_argument("embedding set: want [n, C], got " +
                                std::to_string(embeddings.ndim()) + "-d");
  if (embeddings.rows() != labels.size())
    throw std::invalid_argument("embedding set: " + std::to_string(embeddings.rows()) +
                                " rows vs " + std::to_string(labels.size()) + " labels");
  return {std::move(embeddings), std::move(labels), source};
}

std::size_t eval_threads() {
  if (const char* env = std::getenv("OWCL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw std::invalid_argument("OWCL_THREADS: want a positive integer, got '" +
                                  std::string(env) + "'");
    return std::min<std::size_t>(static_cast<std::size_t>(v), 64);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : std::min<unsigned>(hw, 64);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t k = std::min(eval_threads(), n);
  if (k <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  const std::size_t chunk = (n + k - 1) / k;
  for (std::size_t w = 0; w < k; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : workers) t.join();
}

namespace {

double sq_dist(const double* a, const double* b, std::size_t c) {
  double d = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    const double f = a[i] - b[i];
    d += f * f;
  }
  return d;
}

double finish_recall(const std::vector<std::uint8_t>& verdict, RecallStats* stats,
                     const char* mode) {
  RecallStats s;
  for (std::uint8_t v : verdict) {
    if (v == 2)
      ++s.skipped;
    else {
      ++s.queries;
      s.hits += (v == 1);
    }
  }
  if (s.queries == 0)
    throw std::runtime_error(std::string("recall_at_1: no valid queries (") + mode + ")");
  if (stats)
    *stats = s;
  else if (s.skipped > 0)
    std::fprintf(stderr, "recall_at_1: skipped %zu singleton-class queries\n", s.skipped);
  return static_cast<double>(s.hits) / static_cast<double>(s.queries);
}

}  // namespace

double recall_at_1(const EmbeddingSet& unified, RecallStats* stats) {
  if (unified.source != EmbeddingSource::UNIFIED)
    throw std::invalid_argument("recall_at_1: leave-one-out wants a UNIFIED set");
  const std::size_t n = unified.size();
  if (n < 2) throw std::invalid_argument("recall_at_1: need at least 2 samples");
  const std::size_t c = unified.embeddings.cols();
  const double* e = unified.embeddings.raw();

  std::unordered_map<std::uint64_t, std::size_t> class_count;
  for (std::uint64_t l : unified.labels) ++class_count[l];

  // verdict per query: 0 miss, 1 hit, 2 skipped
  std::vector<std::uint8_t> verdict(n, 0);
  parallel_for(n, [&](std::size_t i) {
    if (class_count.at(unified.labels[i]) < 2) {
      verdict[i] = 2;
      return;
    }
    double best = 0.0;
    std::size_t best_j = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = sq_dist(e + i * c, e + j * c, c);
      if (best_j == n || d < best) {  // strict < keeps the lower index on ties
        best = d;
        best_j = j;
      }
    }
    verdict[i] = (unified.labels[best_j] == unified.labels[i]) ? 1 : 0;
  });
  return finish_recall(verdict, stats, "unified");
}

double recall_at_1(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                   RecallStats* stats) {
  if (queries.size() == 0 || gallery.size() == 0)
    throw std::invalid_argument("recall_at_1: empty query or gallery set");
  if (queries.embeddings.cols() != gallery.embeddings.cols())
    throw std::invalid_argument("recall_at_1: query/gallery dims differ");
  const std::size_t c = queries.embeddings.cols();
  const double* qe = queries.embeddings.raw();
  const double* ge = gallery.embeddings.raw();

  std::unordered_map<std::uint64_t, std::size_t> gallery_count;
  for (std::uint64_t l : gallery.labels) ++gallery_count[l];

  std::vector<std::uint8_t> verdict(queries.size(), 0);
  parallel_for(queries.size(), [&](std::size_t i) {
    auto it = gallery_count.find(queries.labels[i]);
    if (it == gallery_count.end()) {
      verdict[i] = 2;
      return;
    }
    double best = 0.0;
    std::size_t best_j = gallery.size();
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      const double d = sq_dist(qe + i * c, ge + j * c, c);
      if (best_j == gallery.size() || d < best) {
        best = d;
        best_j = j;
      }
    }
    verdict[i] = (gallery.labels[best_j] == queries.labels[i]) ? 1 : 0;
  });
  return finish_recall(verdict, stats, "query/gallery");
}

double forgetting(const std::vector<double>& recalls) {
  if (recalls.size() < 2)
    throw std::invalid_argument("forgetting: need at least 2 stages, got " +
                                std::to_string(recalls.size()));
  double sum = 0.0, prefix_max = recalls[0];
  for (std::size_t n = 1; n < recalls.size(); ++n) {
    sum += std::max(0.0, prefix_max - recalls[n]);
    prefix_max = std::max(prefix_max, recalls[n]);
  }
  return sum / static_cast<double>(recalls.size() - 1);
}

double avg_recall(const std::vector<double>& recalls) {
  if (recalls.empty()) throw std::invalid_argument("avg_recall: empty recall list");
  double sum = 0.0;
  for (double r : recalls) sum += r;
  return sum / static_cast<double>(recalls.size());
}

HistogramReport distance_histogram(const EmbeddingSet& set, std::size_t bins) {
  const std::size_t n = set.size();
  if (n < 2) throw std::invalid_argument("distance_histogram: need at least 2 samples");
  if (bins < 1) throw std::invalid_argument("distance_histogram: need at least 1 bin");
  const std::size_t c = set.embeddings.cols();
  const double* e = set.embeddings.raw();

  HistogramReport rep;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = std::sqrt(sq_dist(e + i * c, e + j * c, c));
      (set.labels[i] == set.labels[j] ? rep.intra : rep.inter).push_back(d);
    }
  if (rep.inter.empty())
    throw std::runtime_error("distance_histogram: single class, no inter-class pairs");
  if (rep.intra.empty())
    throw std::runtime_error("distance_histogram: all classes singleton, no intra pairs");

  double hi = 0.0;
  for (double d : rep.intra) hi = std::max(hi, d);
  for (double d : rep.inter) hi = std::max(hi, d);
  if (hi == 0.0) hi = 1.0;  // all points identical: one degenerate bin span
  rep.bin_edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b)
    rep.bin_edges[b] = hi * static_cast<double>(b) / static_cast<double>(bins);
  rep.intra_counts.assign(bins, 0);
  rep.inter_counts.assign(bins, 0);
  auto bin_of = [&](double d) {
    std::size_t b = static_cast<std::size_t>(std::floor(d / hi * static_cast<double>(bins)));
    return std::min(b, bins - 1);  // top edge inclusive
  };
  for (double d : rep.intra) ++rep.intra_counts[bin_of(d)];
  for (double d : rep.inter) ++rep.inter_counts[bin_of(d)];

  for (double d : rep.intra) rep.mean_intra += d;
  rep.mean_intra /= static_cast<double>(rep.intra.size());
  for (double d : rep.inter) rep.mean_inter += d;
  rep.mean_inter /= static_cast<double>(rep.inter.size());
  rep.mean_gap = rep.mean_inter - rep.mean_intra;
  return rep;
}

}  // namespace owcl
