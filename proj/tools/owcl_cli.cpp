// owcl: experiments, ablations, verification, and reports for the
// open-world continual representation learning laboratory.
//
// Exit codes: 0 success; 1 verification property failure; 2 invalid config
// or usage; 3 runtime failure. Errors go to standard error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "owcl/driver.hpp"
#include "owcl/verify.hpp"

namespace {

using owcl::ExperimentConfig;

ExperimentConfig load_cfg(const std::string& path, const std::optional<std::uint64_t>& seed) {
  ExperimentConfig cfg = owcl::load_config_file(path);
  if (seed) {
    cfg.seed = *seed;
    // round-trip through the canonical form so every derived seed follows
    cfg = owcl::parse_config(owcl::config_to_json(cfg));
  }
  return cfg;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            const std::optional<std::uint64_t>& seed, bool resume) {
  ExperimentConfig cfg;
  try {
    cfg = load_cfg(config_path, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "owcl run: %s\n", e.what());
    return 2;
  }
  try {
    const owcl::RunResult res = owcl::run_experiment(cfg, out_dir, resume);
    std::printf("run complete: %zu stages, R_N %.4f, F_N %.4f (config %s)\n", res.stages,
                res.r_n, res.f_n, res.hash.c_str());
    std::printf("artifacts in %s: config.json, metrics.csv, summary.json, stage_<t>.owcl\n",
                out_dir.c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "owcl run: %s\n", e.what());
    return 3;
  }
}

struct Variant {
  std::string name;
  ExperimentConfig cfg;
};

std::vector<Variant> make_variants(std::string kind, const ExperimentConfig& base) {
  std::transform(kind.begin(), kind.end(), kind.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::vector<Variant> out;
  auto renormalized = [](ExperimentConfig cfg) {
    // the canonical round-trip re-derives dependent fields and re-validates
    return owcl::parse_config(owcl::config_to_json(cfg));
  };
  if (kind == "stage_order") {
    for (owcl::QueuePolicy p :
         {owcl::QueuePolicy::FIFO, owcl::QueuePolicy::FILO, owcl::QueuePolicy::RANDOM}) {
      ExperimentConfig cfg = base;
      cfg.queue_policy = p;
      if (cfg.queue_capacity == 0) cfg.queue_capacity = 5;  // order needs a queue
      out.push_back({owcl::to_string(p), renormalized(cfg)});
    }
    ExperimentConfig none = base;
    none.queue_capacity = 0;  // no stage tokens at all
    out.push_back({"none", renormalized(none)});
  } else if (kind == "rank") {
    const std::size_t c_in = base.backbone.width;
    const std::size_t c_out = base.prompt_n_p * base.backbone.width * base.prompt_layers;
    const std::size_t full = std::min(c_in, c_out);
    std::vector<std::size_t> ranks;
    for (std::size_t r : {64, 128, 256, 384, 512})
      if (r < full) ranks.push_back(r);
    if (ranks.empty())  // desk-scale geometries sweep smaller restricted ranks
      for (std::size_t r : {4, 8, 16, 32})
        if (r < full) ranks.push_back(r);
    for (std::size_t r : ranks) {
      ExperimentConfig cfg = base;
      cfg.mapping_rank = r;
      out.push_back({"r" + std::to_string(r), renormalized(cfg)});
    }
    ExperimentConfig cfg = base;
    cfg.mapping_rank = full;  // full-rank mode exposes the overfitting cliff
    out.push_back({"full", renormalized(cfg)});
  } else if (kind == "peft") {
    for (owcl::AdaptKind k : {owcl::AdaptKind::FREEZE, owcl::AdaptKind::FULL_FT,
                              owcl::AdaptKind::ADAPTER, owcl::AdaptKind::LORA}) {
      ExperimentConfig cfg = base;
      cfg.adaptation.kind = k;
      out.push_back({owcl::to_string(k), renormalized(cfg)});
    }
  } else {
    throw std::invalid_argument("ablate: unknown kind '" + kind +
                                "' (want STAGE_ORDER, RANK, or PEFT)");
  }
  return out;
}

int cmd_ablate(const std::string& kind, const std::string& config_path,
               const std::string& out_dir, const std::optional<std::uint64_t>& seed) {
  std::vector<Variant> variants;
  try {
    const ExperimentConfig base = load_cfg(config_path, seed);
    variants = make_variants(kind, base);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "owcl ablate: %s\n", e.what());
    return 2;
  }
  std::string csv = "variant,r_n,f_n\n";
  try {
    std::filesystem::create_directories(out_dir);
    for (const Variant& v : variants) {
      std::printf("ablate %s: running variant '%s'...\n", kind.c_str(), v.name.c_str());
      std::fflush(stdout);
      const owcl::RunResult res =
          owcl::run_experiment(v.cfg, out_dir + "/" + v.name, /*resume=*/false);
      char line[128];
      std::snprintf(line, sizeof line, "%s,%.17g,%.17g\n", v.name.c_str(), res.r_n, res.f_n);
      csv += line;
      std::printf("  %-8s R_N %.4f  F_N %.4f\n", v.name.c_str(), res.r_n, res.f_n);
      std::fflush(stdout);
    }
    const std::string csv_path = out_dir + "/ablation.csv";
    std::ofstream f(csv_path, std::ios::binary);
    f << csv;
    if (!f) throw std::runtime_error("cannot write " + csv_path);
    std::printf("wrote %s (%zu variants)\n", csv_path.c_str(), variants.size());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "owcl ablate: %s\n", e.what());
    return 3;
  }
}

int cmd_verify(const std::string& only, bool corrupt_lora_init) {
  owcl::VerifyOptions opts;
  opts.only = only;
  opts.corrupt_lora_init = corrupt_lora_init;
  const auto results = owcl::run_verify_suite(opts);
  if (results.empty()) {
    std::fprintf(stderr, "owcl verify: no properties match --only '%s'\n", only.c_str());
    return 1;
  }
  std::size_t passed = 0;
  for (const auto& r : results) {
    std::printf("%s  %-34s %7.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                r.detail.c_str());
    if (r.passed) ++passed;
  }
  std::printf("%zu/%zu properties passed\n", passed, results.size());
  return owcl::all_passed(results) ? 0 : 1;
}

int cmd_report(const std::string& out_dir) {
  namespace fs = std::filesystem;
  const std::string metrics_path = out_dir + "/metrics.csv";
  if (!fs::exists(metrics_path)) {
    std::fprintf(stderr, "owcl report: %s not found (is %s a run directory?)\n",
                 metrics_path.c_str(), out_dir.c_str());
    return 2;
  }
  std::ifstream mf(metrics_path, std::ios::binary);
  std::string header;
  std::getline(mf, header);
  if (header != "stage,recall_at_1") {
    std::fprintf(stderr, "owcl report: unexpected metrics.csv header '%s'\n", header.c_str());
    return 2;
  }
  std::printf("run report: %s\n\n  stage  recall@1\n", out_dir.c_str());
  for (std::string line; std::getline(mf, line);) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      std::fprintf(stderr, "owcl report: malformed metrics row '%s'\n", line.c_str());
      return 2;
    }
    std::printf("  %5s  %.4f\n", line.substr(0, comma).c_str(),
                std::stod(line.substr(comma + 1)));
  }
  const std::string summary_path = out_dir + "/summary.json";
  if (!fs::exists(summary_path)) {
    std::printf("\n(summary.json not present yet; the run has not finished)\n");
    return 0;
  }
  std::ifstream sf(summary_path, std::ios::binary);
  std::stringstream buf;
  buf << sf.rdbuf();
  try {
    const auto doc = nlohmann::json::parse(buf.str());
    std::printf("\n  config hash    %s\n", doc.at("config_hash").get<std::string>().c_str());
    std::printf("  mode           %s\n", doc.at("mode").get<std::string>().c_str());
    std::printf("  stages         %zu\n", doc.at("stages").get<std::size_t>());
    std::printf("  R_N            %.4f\n", doc.at("R_N").get<double>());
    std::printf("  F_N            %.4f\n", doc.at("F_N").get<double>());
    std::printf("  histogram gap  %.4f\n", doc.at("histogram_gap").get<double>());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "owcl report: bad summary.json: %s\n", e.what());
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-world continual representation learning laboratory"};
  app.require_subcommand(1);

  std::string config_path, kind, only;
  std::string out_dir = "owcl_out";
  std::optional<std::uint64_t> seed;
  bool resume = false, corrupt_lora_init = false;

  CLI::App* run = app.add_subcommand("run", "execute one experiment from a JSON config");
  run->add_option("--config", config_path, "config document path")->required();
  run->add_option("--out", out_dir, "output directory")->capture_default_str();
  run->add_option("--seed", seed, "override the config's seed");
  run->add_flag("--resume", resume, "continue from the newest stage_<t>.owcl in --out");

  CLI::App* ablate = app.add_subcommand("ablate", "sweep one axis of a base config");
  ablate->add_option("--kind", kind, "STAGE_ORDER | RANK | PEFT")->required();
  ablate->add_option("--config", config_path, "base config document path")->required();
  ablate->add_option("--out", out_dir, "output directory (one sub-run per variant)")
      ->capture_default_str();
  ablate->add_option("--seed", seed, "override the base config's seed");

  CLI::App* verify = app.add_subcommand("verify", "run the named property suite");
  verify->add_option("--only", only, "substring filter on property names");
  verify->add_flag("--corrupt-lora-init", corrupt_lora_init,
                   "mutation test: inject a broken LoRA zero-init and expect a named failure");

  CLI::App* report = app.add_subcommand("report", "render the metrics of a finished run");
  report->add_option("--out", out_dir, "run directory to report on")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (run->parsed()) return cmd_run(config_path, out_dir, seed, resume);
  if (ablate->parsed()) return cmd_ablate(kind, config_path, out_dir, seed);
  if (verify->parsed()) return cmd_verify(only, corrupt_lora_init);
  return cmd_report(out_dir);
}
