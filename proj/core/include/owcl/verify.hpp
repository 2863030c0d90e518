#pragma once

#include <string>
#include <vector>

namespace owcl {

struct VerifyResult {
  std::string name;
  bool passed = false;
  std::string detail;     // one-line evidence: worst error, counts, pins
  double seconds = 0.0;   // wall time of this property
};

struct VerifyOptions {
  // Substring filter on property names; empty runs everything.
  std::string only;
  // Mutation-test hook: deliberately breaks LoRA's zero-init before the
  // transparency property runs. The suite must then fail exactly at
  // adapt/lora_transparency, demonstrating that the property has teeth.
  bool corrupt_lora_init = false;
};

// Named property suite covering gradient checks, the prefix-attention
// oracle, mapping/prompt-layout fidelity, SVD rank bounds, parameter
// accounting, queue semantics, metric oracles, stage freeze integrity, and
// the checkpoint round-trip. Properties are independent; a throwing property
// is reported as failed, never aborts the suite.
std::vector<VerifyResult> run_verify_suite(const VerifyOptions& opts = {});

// True iff at least one property ran and every one passed. An empty result
// (filter matched nothing) counts as failure so typos in --only are loud.
bool all_passed(const std::vector<VerifyResult>& results);

}  // namespace owcl
