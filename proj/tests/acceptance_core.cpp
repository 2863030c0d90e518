// Acceptance gate, part 1: the oracle-and-property criteria (1-7) plus the
// verify-command contract (10). Prints exactly one PASS/FAIL line per
// criterion and exits nonzero if any fail. Criteria 8 and 9 (desk-scale runs)
// live in acceptance_trends.
//
// Usage: acceptance_core <path-to-owcl-cli>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "owcl/verify.hpp"

namespace {

struct Line {
  int criterion;
  bool passed;
  std::string detail;
};

// Aggregates the suite results whose names start with `prefix`; passes when
// every one passed, there are exactly `expect` of them, and (if nonnegative)
// their summed runtime stays under `budget_s`.
Line criterion_from(const std::vector<owcl::VerifyResult>& results, int criterion,
                    const std::vector<std::string>& prefixes, std::size_t expect,
                    double budget_s = -1.0) {
  std::size_t n = 0, ok = 0;
  double seconds = 0.0;
  std::string first_failure;
  for (const auto& r : results)
    for (const auto& p : prefixes)
      if (r.name.rfind(p, 0) == 0) {
        ++n;
        seconds += r.seconds;
        if (r.passed)
          ++ok;
        else if (first_failure.empty())
          first_failure = r.name + ": " + r.detail;
        break;
      }
  char buf[256];
  if (n != expect) {
    std::snprintf(buf, sizeof buf, "expected %zu properties, suite ran %zu", expect, n);
    return {criterion, false, buf};
  }
  if (ok != n) return {criterion, false, first_failure};
  if (budget_s >= 0.0 && seconds >= budget_s) {
    std::snprintf(buf, sizeof buf, "runtime %.1fs exceeds the %.0fs budget", seconds, budget_s);
    return {criterion, false, buf};
  }
  std::snprintf(buf, sizeof buf, "%zu/%zu properties in %.1fs", ok, n, seconds);
  return {criterion, true, buf};
}

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

CommandResult run_command(const std::string& cmd) {
  CommandResult res;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return res;
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) res.output.append(buf, got);
  const int status = pclose(pipe);
  res.exit_code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  return res;
}

// Criterion 10: cmd_verify runs criteria 1-7 as one named suite; nonzero exit
// on failure. Proven by a clean full run (exit 0, every property named PASS)
// and a corrupted run (exit 1, failing property named FAIL).
Line criterion_10(const std::string& cli) {
  const CommandResult clean = run_command(cli + " verify");
  if (clean.exit_code != 0)
    return {10, false, "clean `owcl verify` exited " + std::to_string(clean.exit_code)};
  for (const char* name :
       {"gradcheck/linear", "prefix/oracle_100", "mapping/dense_oracle", "rank/svd_r256_vitb",
        "params/mapping_counts", "queue/properties_1000", "metrics/recall_brute_100"})
    if (clean.output.find(std::string("PASS  ") + name) == std::string::npos)
      return {10, false, std::string("clean run does not list `PASS  ") + name + "`"};
  const CommandResult bad = run_command(cli + " verify --only adapt/ --corrupt-lora-init");
  if (bad.exit_code == 0) return {10, false, "corrupted LoRA init did not produce a nonzero exit"};
  if (bad.output.find("FAIL  adapt/lora_transparency") == std::string::npos)
    return {10, false, "corrupted run does not name the failing property"};
  return {10, true, "full suite exit 0 with named PASS lines; corrupted LoRA init fails by name"};
}

const char* criterion_label(int n) {
  switch (n) {
    case 1: return "gradient correctness, rel err < 1e-6, < 1 min";
    case 2: return "prefix attention equals concat oracle; empty prefix bitwise";
    case 3: return "mapping composition + prompt reshape fidelity";
    case 4: return "SVD rank bound at 1e-10 for R in {3,64,256}";
    case 5: return "parameter accounting (exact integers + table labels)";
    case 6: return "queue capacity/eviction/freezing properties";
    case 7: return "forgetting and recall metric oracles";
    case 10: return "verify command: named suite, nonzero exit on failure";
    default: return "";
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <path-to-owcl-cli>\n", argv[0]);
    return 2;
  }
  const std::vector<owcl::VerifyResult> results = owcl::run_verify_suite();

  std::vector<Line> lines;
  lines.push_back(criterion_from(results, 1, {"gradcheck/"}, 8, 60.0));
  lines.push_back(criterion_from(results, 2, {"prefix/"}, 2));
  lines.push_back(criterion_from(results, 3, {"mapping/", "prompts/"}, 3));
  lines.push_back(criterion_from(results, 4, {"rank/"}, 6));
  lines.push_back(criterion_from(results, 5, {"params/"}, 2));
  lines.push_back(criterion_from(results, 6, {"queue/"}, 1));
  lines.push_back(criterion_from(results, 7, {"metrics/"}, 3));
  lines.push_back(criterion_10(argv[1]));

  bool all = true;
  for (const auto& l : lines) {
    all = all && l.passed;
    std::printf("criterion %2d: %s — %s (%s)\n", l.criterion, l.passed ? "PASS" : "FAIL",
                criterion_label(l.criterion), l.detail.c_str());
  }
  return all ? 0 : 1;
}
