#include <doctest.h>

#include <set>
#include <string>
#include <vector>

#include "owcl/verify.hpp"

using namespace owcl;

namespace {

const VerifyResult* find(const std::vector<VerifyResult>& rs, const std::string& name) {
  for (const auto& r : rs)
    if (r.name == name) return &r;
  return nullptr;
}

}  // namespace

TEST_CASE("verify: full suite runs clean with the expected property roster") {
  const std::vector<std::string> want = {
      "gradcheck/linear",
      "gradcheck/layernorm",
      "gradcheck/attention",
      "gradcheck/attention_prefix",
      "gradcheck/mapping",
      "gradcheck/lora",
      "gradcheck/adapter",
      "gradcheck/arcface",
      "prefix/oracle_100",
      "prefix/empty_bitwise",
      "mapping/dense_oracle",
      "prompts/layout_8_64_3",
      "prompts/layout_8_768_5",
      "rank/svd_r3_small",
      "rank/svd_r64_small",
      "rank/svd_r256_small",
      "rank/svd_r3_vitb",
      "rank/svd_r64_vitb",
      "rank/svd_r256_vitb",
      "params/mapping_counts",
      "params/lora_count",
      "queue/properties_1000",
      "metrics/forgetting_exact",
      "metrics/forgetting_monotone_1000",
      "metrics/recall_brute_100",
      "adapt/lora_transparency",
      "adapt/adapter_transparency",
      "freeze/tiny_stage",
      "checkpoint/roundtrip",
  };
  const auto results = run_verify_suite();
  REQUIRE(results.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CAPTURE(results[i].name);
    CAPTURE(results[i].detail);
    CHECK(results[i].name == want[i]);
    CHECK(results[i].passed);
    CHECK(!results[i].detail.empty());
    CHECK(results[i].seconds >= 0.0);
  }
  CHECK(all_passed(results));
}

TEST_CASE("verify: substring filter selects exactly the matching properties") {
  const auto grad = run_verify_suite({.only = "gradcheck"});
  REQUIRE(grad.size() == 8);
  for (const auto& r : grad) {
    CHECK(r.name.find("gradcheck/") == 0);
    CHECK(r.passed);
  }

  const auto one = run_verify_suite({.only = "queue/properties_1000"});
  REQUIRE(one.size() == 1);
  CHECK(one[0].name == "queue/properties_1000");
  CHECK(one[0].passed);

  const auto none = run_verify_suite({.only = "no-such-property"});
  CHECK(none.empty());
  CHECK(!all_passed(none));  // a filter typo must not read as success
}

TEST_CASE("verify: corrupted LoRA zero-init fails exactly the named property") {
  VerifyOptions opts;
  opts.only = "adapt/";
  opts.corrupt_lora_init = true;
  const auto results = run_verify_suite(opts);
  REQUIRE(results.size() == 2);
  const VerifyResult* lora = find(results, "adapt/lora_transparency");
  const VerifyResult* adapter = find(results, "adapt/adapter_transparency");
  REQUIRE(lora != nullptr);
  REQUIRE(adapter != nullptr);
  CHECK(!lora->passed);  // the injected bug must surface here, by name
  CHECK(lora->detail.find("transparent") != std::string::npos);
  CHECK(adapter->passed);
  CHECK(!all_passed(results));

  // and the same properties pass once the mutation is gone
  opts.corrupt_lora_init = false;
  CHECK(all_passed(run_verify_suite(opts)));
}

TEST_CASE("verify: all_passed demands a nonempty, fully green result set") {
  CHECK(!all_passed({}));
  std::vector<VerifyResult> mixed(2);
  mixed[0].passed = true;
  mixed[1].passed = false;
  CHECK(!all_passed(mixed));
  mixed[1].passed = true;
  CHECK(all_passed(mixed));
}
