#include "owcl/driver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace owcl {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const char* where,
                    std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok)
      throw std::invalid_argument(std::string("config: unknown key '") + key + "' in " + where);
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("config: top level must be an object");

  ExperimentConfig cfg;
  try {
    reject_unknown(doc, "the top level",
                   {"seed", "mode", "num_stages", "epochs_per_stage", "batch_size", "lr0",
                    "adaptation", "queue", "mapping", "prompt", "arcface", "backbone",
                    "pool_size", "data", "normalize_embeddings"});
    read_field(doc, "seed", cfg.seed);
    if (doc.contains("mode")) cfg.mode = run_mode_from_string(doc.at("mode").get<std::string>());
    read_field(doc, "num_stages", cfg.num_stages);
    read_field(doc, "epochs_per_stage", cfg.epochs_per_stage);
    read_field(doc, "batch_size", cfg.batch_size);
    read_field(doc, "lr0", cfg.lr0);
    read_field(doc, "pool_size", cfg.pool_size);
    read_field(doc, "normalize_embeddings", cfg.normalize_embeddings);

    if (doc.contains("adaptation")) {
      const json& a = doc.at("adaptation");
      reject_unknown(a, "adaptation", {"kind", "lora_rank", "lora_alpha", "adapter_bottleneck"});
      if (a.contains("kind"))
        cfg.adaptation.kind = adapt_kind_from_string(a.at("kind").get<std::string>());
      read_field(a, "lora_rank", cfg.adaptation.lora_rank);
      read_field(a, "lora_alpha", cfg.adaptation.lora_alpha);
      read_field(a, "adapter_bottleneck", cfg.adaptation.adapter_bottleneck);
    }
    if (doc.contains("queue")) {
      const json& q = doc.at("queue");
      reject_unknown(q, "queue", {"policy", "capacity"});
      if (q.contains("policy"))
        cfg.queue_policy = queue_policy_from_string(q.at("policy").get<std::string>());
      read_field(q, "capacity", cfg.queue_capacity);
    }
    if (doc.contains("mapping")) {
      const json& m = doc.at("mapping");
      reject_unknown(m, "mapping", {"rank", "dropout"});
      read_field(m, "rank", cfg.mapping_rank);
      read_field(m, "dropout", cfg.mapping_dropout);
    }
    if (doc.contains("prompt")) {
      const json& p = doc.at("prompt");
      reject_unknown(p, "prompt", {"n_p", "layers"});
      read_field(p, "n_p", cfg.prompt_n_p);
      read_field(p, "layers", cfg.prompt_layers);
    }
    if (doc.contains("arcface")) {
      const json& a = doc.at("arcface");
      reject_unknown(a, "arcface", {"scale", "margin"});
      read_field(a, "scale", cfg.arcface.scale);
      read_field(a, "margin", cfg.arcface.margin);
    }
    if (doc.contains("backbone")) {
      const json& b = doc.at("backbone");
      reject_unknown(b, "backbone",
                     {"image_side", "patch", "width", "heads", "depth", "mlp_ratio"});
      read_field(b, "image_side", cfg.backbone.image_side);
      read_field(b, "patch", cfg.backbone.patch);
      read_field(b, "width", cfg.backbone.width);
      read_field(b, "heads", cfg.backbone.heads);
      read_field(b, "depth", cfg.backbone.depth);
      read_field(b, "mlp_ratio", cfg.backbone.mlp_ratio);
    }
    if (doc.contains("data")) {
      const json& d = doc.at("data");
      reject_unknown(d, "data", {"train_classes", "test_classes", "samples_per_class",
                                 "noise_sigma", "freq_lo", "freq_hi"});
      read_field(d, "train_classes", cfg.data.num_train_classes);
      read_field(d, "test_classes", cfg.data.num_test_classes);
      read_field(d, "samples_per_class", cfg.data.samples_per_class);
      read_field(d, "noise_sigma", cfg.data.noise_sigma);
      read_field(d, "freq_lo", cfg.data.freq_lo);
      read_field(d, "freq_hi", cfg.data.freq_hi);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }

  if (cfg.mode == RunMode::UPPER_BOUND) cfg.num_stages = 1;
  cfg.data.image_side = cfg.backbone.image_side;
  cfg.data.master_seed = derive_seed(cfg.seed, "data");
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::invalid_argument("config: cannot open " + path);
  std::string text;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
  std::fclose(f);
  return parse_config(text);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["seed"] = cfg.seed;
  doc["mode"] = to_string(cfg.mode);
  doc["num_stages"] = cfg.num_stages;
  doc["epochs_per_stage"] = cfg.epochs_per_stage;
  doc["batch_size"] = cfg.batch_size;
  doc["lr0"] = cfg.lr0;
  doc["adaptation"] = {{"kind", to_string(cfg.adaptation.kind)},
                       {"lora_rank", cfg.adaptation.lora_rank},
                       {"lora_alpha", cfg.adaptation.lora_alpha},
                       {"adapter_bottleneck", cfg.adaptation.adapter_bottleneck}};
  doc["queue"] = {{"policy", to_string(cfg.queue_policy)}, {"capacity", cfg.queue_capacity}};
  doc["mapping"] = {{"rank", cfg.mapping_rank}, {"dropout", cfg.mapping_dropout}};
  doc["prompt"] = {{"n_p", cfg.prompt_n_p}, {"layers", cfg.prompt_layers}};
  doc["arcface"] = {{"scale", cfg.arcface.scale}, {"margin", cfg.arcface.margin}};
  doc["backbone"] = {{"image_side", cfg.backbone.image_side}, {"patch", cfg.backbone.patch},
                     {"width", cfg.backbone.width},           {"heads", cfg.backbone.heads},
                     {"depth", cfg.backbone.depth},           {"mlp_ratio", cfg.backbone.mlp_ratio}};
  doc["pool_size"] = cfg.pool_size;
  doc["data"] = {{"train_classes", cfg.data.num_train_classes},
                 {"test_classes", cfg.data.num_test_classes},
                 {"samples_per_class", cfg.data.samples_per_class},
                 {"noise_sigma", cfg.data.noise_sigma},
                 {"freq_lo", cfg.data.freq_lo},
                 {"freq_hi", cfg.data.freq_hi}};
  doc["normalize_embeddings"] = cfg.normalize_embeddings;
  return doc.dump(2);
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::uint64_t h = detail::fnv1a64(config_to_json(cfg));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.num_stages < 1) throw std::invalid_argument("config: num_stages must be >= 1");
  if (cfg.mode == RunMode::UPPER_BOUND && cfg.num_stages != 1)
    throw std::invalid_argument("config: upper_bound runs exactly one stage");
  if (cfg.epochs_per_stage < 1)
    throw std::invalid_argument("config: epochs_per_stage must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (!(cfg.lr0 > 0.0)) throw std::invalid_argument("config: lr0 must be positive");
  if (cfg.data.num_train_classes < cfg.num_stages)
    throw std::invalid_argument("config: need at least one training class per stage");
  if (cfg.prompt_n_p < 2 || cfg.prompt_n_p % 2 != 0)
    throw std::invalid_argument("config: prompt n_p must be even and >= 2");
  if (cfg.prompt_layers < 1 || cfg.prompt_layers > cfg.backbone.depth)
    throw std::invalid_argument("config: prompt layers outside [1, depth]");
  const std::size_t flat = cfg.prompt_n_p * cfg.backbone.width * cfg.prompt_layers;
  if (cfg.mapping_rank < 1 || cfg.mapping_rank > std::min(cfg.backbone.width, flat))
    throw std::invalid_argument("config: mapping rank outside [1, min(width, prompt size)]");
  if (cfg.pool_size < 1) throw std::invalid_argument("config: pool_size must be >= 1");
  if (cfg.mapping_dropout < 0.0 || cfg.mapping_dropout >= 1.0)
    throw std::invalid_argument("config: mapping dropout outside [0, 1)");
  validate_spec(cfg.data);
}

std::pair<std::size_t, std::size_t> stage_sizes(std::size_t total, std::size_t n_stages) {
  if (n_stages < 1) throw std::invalid_argument("split: need at least one stage");
  if (total < n_stages)
    throw std::invalid_argument("split: " + std::to_string(total) + " classes over " +
                                std::to_string(n_stages) + " stages");
  if (n_stages == 1) return {total, 0};
  const std::size_t others = (total + n_stages - 1) / n_stages;  // ceil
  if (total > (n_stages - 1) * others)
    return {total - (n_stages - 1) * others, others};
  // ceil starves the first stage (tiny totals): fall back to the floor split
  const std::size_t floor_others = total / n_stages;
  return {total - (n_stages - 1) * floor_others, floor_others};
}

StageSchedule split_classes(const std::vector<std::uint64_t>& class_ids, std::size_t n_stages,
                            std::uint64_t order_seed) {
  const auto [first, others] = stage_sizes(class_ids.size(), n_stages);
  const std::vector<std::uint64_t> order = seeded_permutation(class_ids, order_seed);
  StageSchedule sched;
  std::size_t at = 0;
  for (std::size_t s = 0; s < n_stages; ++s) {
    const std::size_t take = s == 0 ? first : others;
    sched.stage_classes.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                                     order.begin() + static_cast<std::ptrdiff_t>(at + take));
    at += take;
  }
  return sched;
}

double lr_schedule(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0 || step > total_steps)
    throw std::invalid_argument("lr_schedule: step outside [0, total]");
  return lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                         static_cast<double>(total_steps)));
}

void adam_step(ParameterRegistry& registry, AdamState& state, double lr) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& e : registry.entries) {
    if (!e.learnable) continue;
    if (!e.tensor.has_grad())
      throw std::runtime_error("adam: missing gradient for learnable entry '" + e.name + "'");
    const std::vector<double>& g = e.tensor.grad();
    std::vector<double>& m = state.m[e.name];
    std::vector<double>& v = state.v[e.name];
    if (m.empty()) m.assign(g.size(), 0.0);
    if (v.empty()) v.assign(g.size(), 0.0);
    if (m.size() != g.size())
      throw std::runtime_error("adam: state size mismatch for '" + e.name + "'");
    double* w = e.tensor.raw_mut();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

namespace {

bool uses_dpg(RunMode m) {
  return m == RunMode::DPARL || m == RunMode::DPG_FROZEN || m == RunMode::UPPER_BOUND;
}

}  // namespace

ModelBundle build_bundle(const ExperimentConfig& cfg) {
  validate_config(cfg);
  ModelBundle b;
  b.mode = cfg.mode;
  b.adaptation = cfg.adaptation;
  // DPG_FROZEN is the frozen-backbone ablation, the static pool baseline
  // keeps its backbone frozen, and the lower bound is the untouched
  // pre-trained model: none of them attach PEFT modules.
  if (cfg.mode == RunMode::DPG_FROZEN || cfg.mode == RunMode::STATIC_POOL ||
      cfg.mode == RunMode::LOWER_BOUND)
    b.adaptation.kind = AdaptKind::FREEZE;
  Rng backbone_rng = make_stream(cfg.seed, "init/backbone");
  b.backbone = make_vit(cfg.backbone, backbone_rng);
  b.layout = PromptLayout{cfg.prompt_n_p, cfg.backbone.width, cfg.prompt_layers};

  const bool dpg = uses_dpg(cfg.mode);
  const bool pool = cfg.mode == RunMode::STATIC_POOL;
  if (dpg || pool) {
    Rng encoder_rng = make_stream(cfg.seed, "init/encoder");
    b.encoder = make_vit(cfg.backbone, encoder_rng);
  }
  b.queue.width = cfg.backbone.width;
  b.queue.policy = cfg.queue_policy;
  b.queue.capacity = dpg ? cfg.queue_capacity : 0;
  if (dpg) {
    Rng mapping_rng = make_stream(cfg.seed, "init/mapping");
    b.mapping = make_low_rank_map(cfg.backbone.width, b.layout.flat(), cfg.mapping_rank,
                                  cfg.mapping_dropout, mapping_rng);
  }
  if (pool) {
    Rng pool_rng = make_stream(cfg.seed, "init/pool");
    b.pool = make_static_pool(cfg.pool_size, cfg.backbone.width, b.layout, pool_rng);
  }
  Rng adapt_rng = make_stream(cfg.seed, "init/adapt");
  if (b.adaptation.kind == AdaptKind::LORA)
    apply_lora(b.backbone, b.adaptation.lora_rank, b.adaptation.lora_alpha, adapt_rng);
  if (b.adaptation.kind == AdaptKind::ADAPTER)
    apply_adapter(b.backbone, b.adaptation.adapter_bottleneck, adapt_rng);
  b.bank = make_bank(cfg.backbone.width);
  return b;
}

Tensor compute_embedding(const ModelBundle& bundle, const Tensor& image, bool training,
                         Rng& dropout_rng, bool normalize) {
  PrefixMap prefixes;
  const PrefixMap* pm = nullptr;
  if (bundle.mapping && bundle.encoder) {
    DpgNetwork net{*bundle.encoder, bundle.queue, *bundle.mapping, bundle.layout};
    const PromptTensor prompts = generate_prompts(net, image, training, dropout_rng);
    prefixes = prompt_prefix_map(prompts);
    pm = &prefixes;
  } else if (bundle.pool && bundle.encoder) {
    const VitOutput query = vit_forward(*bundle.encoder, image);
    const PromptTensor prompts = pool_combine(*bundle.pool, query.cls);
    prefixes = prompt_prefix_map(prompts);
    pm = &prefixes;
  }
  const VitOutput out = vit_forward(bundle.backbone, image, pm);
  return normalize ? l2_normalize_rows(out.cls) : out.cls;
}

RunState init_run(const ExperimentConfig& cfg) {
  validate_config(cfg);
  RunState st;
  st.config = cfg;
  st.data = generate_dataset(cfg.data);
  st.schedule =
      split_classes(st.data.train_classes, cfg.num_stages, derive_seed(cfg.seed, "class_order"));
  st.bundle = build_bundle(cfg);
  st.audit.resize(cfg.num_stages);
  return st;
}

namespace {

// The loop's only path to pixels; logs every class it hands out so the
// rehearsal-free contract is auditable.
struct StageAccessor {
  const DatasetSplit& data;
  std::set<std::uint64_t>& log;

  const Tensor& image(std::uint64_t class_id, std::size_t sample) {
    log.insert(class_id);
    return find_class(data, class_id).images.at(sample);
  }
};

}  // namespace

void run_stage(RunState& st, std::size_t stage) {
  const ExperimentConfig& cfg = st.config;
  if (stage != st.completed_stages + 1)
    throw std::runtime_error("run_stage: stage " + std::to_string(stage) + " out of order (" +
                             std::to_string(st.completed_stages) + " completed)");
  if (stage > cfg.num_stages) throw std::runtime_error("run_stage: past the last stage");
  const std::vector<std::uint64_t>& stage_classes = st.schedule.stage_classes[stage - 1];
  if (stage_classes.empty()) throw std::runtime_error("run_stage: empty stage");

  if (st.bundle.queue.capacity > 0) {
    Rng token_rng = make_stream(cfg.seed, "init/token", {stage});
    Rng evict_rng = make_stream(cfg.seed, "evict", {stage});
    queue_advance(st.bundle.queue, stage, token_rng, evict_rng);
  }
  Rng bank_rng = make_stream(cfg.seed, "init/bank", {stage});
  bank_extend(st.bundle.bank, stage_classes, stage, bank_rng);
  ParameterRegistry registry = partition_parameters(st.bundle);

  const bool trains = cfg.mode != RunMode::LOWER_BOUND;
  if (trains) {
    StageAccessor accessor{st.data, st.audit[stage - 1]};
    std::vector<std::pair<std::uint64_t, std::size_t>> samples;
    for (std::uint64_t cid : stage_classes)
      for (std::size_t s = 0; s < cfg.data.samples_per_class; ++s) samples.emplace_back(cid, s);

    const std::size_t batches_per_epoch = (samples.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs_per_stage * batches_per_epoch;
    AdamState adam;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
      std::vector<std::size_t> order(samples.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng order_rng = make_stream(cfg.seed, "order", {stage, epoch});
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[order_rng.uniform_int(i)]);

      for (std::size_t b = 0; b < batches_per_epoch; ++b, ++step) {
        const std::size_t lo = b * cfg.batch_size;
        const std::size_t hi = std::min(samples.size(), lo + cfg.batch_size);
        const double lr = lr_schedule(step, total_steps, cfg.lr0);
        Tape tape;
        TapeScope scope(tape);
        Tensor loss_sum;
        for (std::size_t k = lo; k < hi; ++k) {
          const auto [cid, sid] = samples[order[k]];
          Rng dropout_rng = make_stream(cfg.seed, "dropout", {stage, epoch, b, k - lo});
          const Tensor emb = compute_embedding(st.bundle, accessor.image(cid, sid), true,
                                               dropout_rng, cfg.normalize_embeddings);
          const Tensor l = arcface_loss(emb, st.bundle.bank, cid, cfg.arcface);
          loss_sum = k == lo ? l : add(loss_sum, l);
        }
        const Tensor loss = scale(loss_sum, 1.0 / static_cast<double>(hi - lo));
        registry.zero_grads();
        tape.backward(loss);
        adam_step(registry, adam, lr);
      }
    }
  }

  st.recalls.push_back(evaluate_recall(st));
  st.completed_stages = stage;
}

namespace {

EmbeddingSet test_embeddings(const RunState& st) {
  const ExperimentConfig& cfg = st.config;
  const std::size_t per = cfg.data.samples_per_class;
  const std::size_t n = st.data.test_classes.size() * per;
  Tensor all = Tensor::zeros({n, cfg.backbone.width});
  std::vector<std::uint64_t> labels(n);
  std::vector<const Tensor*> images(n);
  std::size_t at = 0;
  for (std::uint64_t cid : st.data.test_classes) {
    const ClassSamples& cs = find_class(st.data, cid);
    for (std::size_t s = 0; s < per; ++s, ++at) {
      labels[at] = cid;
      images[at] = &cs.images[s];
    }
  }
  double* out = all.raw_mut();
  parallel_for(n, [&](std::size_t i) {
    Rng dropout_rng(0);  // inference: dropout is identity, stream unused
    const Tensor emb =
        compute_embedding(st.bundle, *images[i], false, dropout_rng, cfg.normalize_embeddings);
    std::copy(emb.raw(), emb.raw() + cfg.backbone.width, out + i * cfg.backbone.width);
  });
  return make_embedding_set(std::move(all), std::move(labels));
}

}  // namespace

double evaluate_recall(const RunState& st) {
  RecallStats stats;
  return recall_at_1(test_embeddings(st), &stats);
}

HistogramReport test_histogram(const RunState& st, std::size_t bins) {
  return distance_histogram(test_embeddings(st), bins);
}

std::vector<CheckpointEntry> make_checkpoint(const RunState& st) {
  RunState& mut = const_cast<RunState&>(st);  // visit_params wants mutable tensors
  std::vector<CheckpointEntry> entries;
  entries.push_back(bytes_entry("__config", config_to_json(st.config)));
  entries.push_back(u64_entry("__stage", {st.completed_stages}));
  entries.push_back(u64_entry("__rng_master", {st.config.seed}));
  entries.push_back(
      tensor_entry("__recalls", st.recalls.empty()
                                    ? Tensor::zeros({0})
                                    : Tensor::from({st.recalls.size()}, st.recalls)));
  entries.push_back(u64_entry("__bank_classes", st.bundle.bank.classes));
  std::vector<std::uint64_t> birth(st.bundle.bank.birth_stage.begin(),
                                   st.bundle.bank.birth_stage.end());
  entries.push_back(u64_entry("__bank_birth", std::move(birth)));
  std::vector<std::uint64_t> qstages;
  for (const auto& tok : st.bundle.queue.tokens) qstages.push_back(tok.stage);
  entries.push_back(u64_entry("__queue_stages", std::move(qstages)));
  visit_params(mut.bundle, [&](const std::string& name, Tensor& t) {
    entries.push_back(tensor_entry(name, t));
  });
  return entries;
}

void apply_checkpoint(RunState& st, const std::vector<CheckpointEntry>& entries) {
  const std::string want_hash = config_hash(st.config);
  const ExperimentConfig saved = parse_config(entry_to_string(find_entry(entries, "__config")));
  if (config_hash(saved) != want_hash)
    throw std::runtime_error("checkpoint: config hash mismatch (checkpoint " +
                             config_hash(saved) + ", run " + want_hash + ")");
  if (find_entry(entries, "__rng_master").u64.at(0) != st.config.seed)
    throw std::runtime_error("checkpoint: seed mismatch");

  const std::size_t stage = find_entry(entries, "__stage").u64.at(0);
  if (stage > st.config.num_stages) throw std::runtime_error("checkpoint: stage out of range");

  // dynamic state first: bank rows and queue tokens define tensor shapes
  const auto& classes = find_entry(entries, "__bank_classes").u64;
  const auto& birth = find_entry(entries, "__bank_birth").u64;
  if (classes.size() != birth.size())
    throw std::runtime_error("checkpoint: bank class/birth length mismatch");
  st.bundle.bank = make_bank(st.config.backbone.width);
  if (!classes.empty()) {
    const CheckpointEntry& protos = find_entry(entries, "loss/prototypes");
    st.bundle.bank.prototypes = entry_to_tensor(protos);
    if (st.bundle.bank.prototypes.rows() != classes.size())
      throw std::runtime_error("checkpoint: prototype rows do not match bank classes");
    st.bundle.bank.classes = classes;
    st.bundle.bank.birth_stage.assign(birth.begin(), birth.end());
  }
  st.bundle.queue.tokens.clear();
  for (std::uint64_t qs : find_entry(entries, "__queue_stages").u64) {
    StageToken tok;
    tok.stage = static_cast<std::size_t>(qs);
    tok.token = entry_to_tensor(find_entry(entries, "queue/token" + std::to_string(qs)));
    tok.frozen = true;  // the next queue_advance re-freezes everything anyway
    st.bundle.queue.tokens.push_back(std::move(tok));
  }

  // static tensors: every visited name must exist with the same shape
  std::set<std::string> consumed = {"__config", "__stage",        "__rng_master",
                                    "__recalls", "__bank_classes", "__bank_birth",
                                    "__queue_stages"};
  visit_params(st.bundle, [&](const std::string& name, Tensor& t) {
    const CheckpointEntry& e = find_entry(entries, name);
    if (e.type != EntryType::F64_TENSOR || e.dims != t.shape())
      throw std::runtime_error("checkpoint: entry '" + name + "' does not match the model");
    std::copy(e.f64.begin(), e.f64.end(), t.raw_mut());
    consumed.insert(name);
  });
  for (const auto& e : entries)
    if (!consumed.count(e.name))
      throw std::runtime_error("checkpoint: unknown tensor '" + e.name +
                               "' for this architecture");

  const CheckpointEntry& recalls = find_entry(entries, "__recalls");
  st.recalls.assign(recalls.f64.begin(), recalls.f64.end());
  if (st.recalls.size() != stage)
    throw std::runtime_error("checkpoint: recall history does not match the stage counter");
  st.completed_stages = stage;
}

namespace {

void write_text_file(const std::string& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  const std::size_t n = std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
  if (n != text.size()) throw std::runtime_error("short write: " + path);
}

std::string metrics_csv(const std::vector<double>& recalls) {
  std::string csv = "stage,recall_at_1\n";
  char line[64];
  for (std::size_t i = 0; i < recalls.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.17g\n", i + 1, recalls[i]);
    csv += line;
  }
  return csv;
}

std::string summary_json(const ExperimentConfig& cfg, const RunResult& result) {
  json doc;
  doc["config_hash"] = result.hash;
  doc["mode"] = to_string(cfg.mode);
  doc["stages"] = result.stages;
  doc["recalls"] = result.recalls;
  doc["R_N"] = result.r_n;
  doc["F_N"] = result.f_n;
  doc["histogram_gap"] = result.histogram_gap;
  return doc.dump(2) + "\n";
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, bool resume) {
  namespace fs = std::filesystem;
  validate_config(cfg);
  fs::create_directories(out_dir);
  const std::string config_path = out_dir + "/config.json";
  write_text_file(config_path, config_to_json(cfg) + "\n");

  RunState st = init_run(cfg);
  if (resume) {
    std::size_t latest = 0;
    for (std::size_t t = 1; t <= cfg.num_stages; ++t)
      if (fs::exists(out_dir + "/stage_" + std::to_string(t) + ".owcl")) latest = t;
    if (latest > 0) {
      const auto bytes = read_binary_file(out_dir + "/stage_" + std::to_string(latest) + ".owcl");
      apply_checkpoint(st, deserialize_checkpoint(bytes));
    }
  }

  for (std::size_t stage = st.completed_stages + 1; stage <= cfg.num_stages; ++stage) {
    run_stage(st, stage);
    write_binary_file(out_dir + "/stage_" + std::to_string(stage) + ".owcl",
                      serialize_checkpoint(make_checkpoint(st)));
    write_text_file(out_dir + "/metrics.csv", metrics_csv(st.recalls));
  }

  RunResult result;
  result.recalls = st.recalls;
  result.r_n = avg_recall(st.recalls);
  result.f_n = st.recalls.size() >= 2 ? forgetting(st.recalls) : 0.0;
  result.histogram_gap = test_histogram(st, 32).mean_gap;
  result.hash = config_hash(cfg);
  result.stages = st.recalls.size();
  write_text_file(out_dir + "/metrics.csv", metrics_csv(st.recalls));
  write_text_file(out_dir + "/summary.json", summary_json(cfg, result));
  return result;
}

}  // namespace owcl
