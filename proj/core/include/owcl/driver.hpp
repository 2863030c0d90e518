#pragma once

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "owcl/adapt.hpp"
#include "owcl/checkpoint.hpp"
#include "owcl/data.hpp"
#include "owcl/eval.hpp"

namespace owcl {

struct ExperimentConfig {
  std::uint64_t seed = 1;
  RunMode mode = RunMode::DPARL;
  std::size_t num_stages = 10;
  std::size_t epochs_per_stage = 5;
  std::size_t batch_size = 32;
  double lr0 = 0.001;
  AdaptationMode adaptation;
  QueuePolicy queue_policy = QueuePolicy::FIFO;
  std::size_t queue_capacity = 5;
  std::size_t mapping_rank = 16;
  double mapping_dropout = 0.1;
  std::size_t prompt_n_p = 8;
  std::size_t prompt_layers = 3;
  ArcFaceParams arcface;
  VitGeometry backbone;  // shared geometry for backbone and DPG encoder
  std::size_t pool_size = 20;
  SyntheticSpec data;  // image side and master seed are derived, not config keys
  bool normalize_embeddings = false;
};

// Strict JSON parsing: unknown keys are hard errors; every key is optional
// and falls back to the desk-scale default. UPPER_BOUND normalizes to a
// single stage.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);  // canonical, sorted keys
std::string config_hash(const ExperimentConfig& cfg);     // fnv1a64 hex of the canonical form
void validate_config(const ExperimentConfig& cfg);

struct StageSchedule {
  std::vector<std::vector<std::uint64_t>> stage_classes;  // disjoint, union = all
};

// Later stages share one ceil-balanced size; the first stage absorbs the
// remainder (falling back to the floor split when ceil leaves it empty).
std::pair<std::size_t, std::size_t> stage_sizes(std::size_t total, std::size_t n_stages);

StageSchedule split_classes(const std::vector<std::uint64_t>& class_ids, std::size_t n_stages,
                            std::uint64_t order_seed);

// lr0 * 0.5 * (1 + cos(pi * step / total)); restarted every stage.
double lr_schedule(std::size_t step, std::size_t total_steps, double lr0);

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;  // bias-correction step count
  std::unordered_map<std::string, std::vector<double>> m, v;
};

// One update over every learnable registry entry; frozen entries untouched.
// A learnable entry without a gradient is an error.
void adam_step(ParameterRegistry& registry, AdamState& state, double lr);

ModelBundle build_bundle(const ExperimentConfig& cfg);

// Mode-dispatched forward: DPG prompts, pool prompts, or the bare backbone;
// returns the final-layer CLS embedding [1, C].
Tensor compute_embedding(const ModelBundle& bundle, const Tensor& image, bool training,
                         Rng& dropout_rng, bool normalize);

struct RunState {
  ExperimentConfig config;
  DatasetSplit data;
  StageSchedule schedule;
  ModelBundle bundle;
  std::vector<double> recalls;  // one per completed stage
  std::size_t completed_stages = 0;
  std::vector<std::set<std::uint64_t>> audit;  // class ids touched per stage
};

RunState init_run(const ExperimentConfig& cfg);

// Stage t (1-based, in order): queue_advance, bank_extend, partition, train
// on stage-t samples only, then evaluate and record R_t.
void run_stage(RunState& state, std::size_t stage);

// Leave-one-out recall over the full unseen-class test set.
double evaluate_recall(const RunState& state);

HistogramReport test_histogram(const RunState& state, std::size_t bins);

std::vector<CheckpointEntry> make_checkpoint(const RunState& state);

// Restores tensors, bank rows, queue tokens, recalls, and stage counter into
// a freshly init_run state. Config hash must match; unknown or missing
// tensor names are structured errors.
void apply_checkpoint(RunState& state, const std::vector<CheckpointEntry>& entries);

struct RunResult {
  std::vector<double> recalls;
  double r_n = 0.0;
  double f_n = 0.0;
  double histogram_gap = 0.0;
  std::string hash;
  std::size_t stages = 0;
};

// Full experiment: stages, per-stage checkpoints (stage_<t>.owcl), metrics.csv,
// summary.json, config.json snapshot under out_dir. resume=true continues from
// the newest checkpoint in out_dir.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                         bool resume = false);

}  // namespace owcl
