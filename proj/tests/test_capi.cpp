// Exercises the extern-C surface exactly as an external client would: only
// the public header, no C++ core headers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "bilevel/bilevel.h"

namespace {

using nlohmann::json;

std::filesystem::path work_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "bilevel_capi_test";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string take(char* owned) {
  REQUIRE(owned != nullptr);
  std::string out = owned;
  blo_string_free(owned);
  return out;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("instance lifecycle through the C API") {
  const auto dir = work_dir();
  blo_instance* inst = nullptr;
  CHECK(blo_instance_generate("quad", R"({"d":6,"p":5,"seed":11})", &inst) == BLO_OK);
  REQUIRE(inst != nullptr);

  int64_t d = 0, p = 0;
  CHECK(blo_instance_dims(inst, &d, &p) == BLO_OK);
  CHECK(d == 6);
  CHECK(p == 5);

  const std::string path = (dir / "quad.blo").string();
  CHECK(blo_instance_save(inst, path.c_str()) == BLO_OK);
  blo_instance_free(inst);

  blo_instance* loaded = nullptr;
  CHECK(blo_instance_load(path.c_str(), &loaded) == BLO_OK);
  char* summary_raw = nullptr;
  CHECK(blo_instance_summary(loaded, &summary_raw) == BLO_OK);
  const json summary = json::parse(take(summary_raw));
  CHECK(summary.at("family") == "quad");
  CHECK(summary.at("d") == 6);
  blo_instance_free(loaded);

  // error paths set a message and a config/argument status
  blo_instance* bad = nullptr;
  CHECK(blo_instance_generate("plgame", R"({"d":5,"l":9,"n":3})", &bad) ==
        BLO_ERR_CONFIG);
  CHECK(std::string(blo_last_error()).find("l < d") != std::string::npos);
  CHECK(blo_instance_generate("nope", "{}", &bad) == BLO_ERR_CONFIG);
  CHECK(blo_instance_generate("quad", "{}", nullptr) == BLO_ERR_INVALID_ARGUMENT);
  CHECK(blo_instance_load((dir / "missing.blo").string().c_str(), &bad) == BLO_ERR_IO);
}

TEST_CASE("run, determinism and rate fitting through the C API") {
  const auto dir = work_dir() / "runs";
  std::filesystem::remove_all(dir);

  json config;
  config["problem"] = {{"family", "quad"}, {"d", 8}, {"p", 8}, {"seed", 3}};
  config["solver"] = {{"name", "mgbio"}, {"gamma", 0.05}, {"lambda", 0.1},
                      {"T", 400}, {"seed", 21},
                      {"schedule", {{"variant", "constant"}, {"eta", 1.0}}}};
  config["output"] = {{"dir", (dir / "a").string()}};

  char* summary_raw = nullptr;
  REQUIRE(blo_run(config.dump().c_str(), &summary_raw) == BLO_OK);
  const json summary = json::parse(take(summary_raw));
  const std::string csv = summary.at("trace_csv");
  CHECK(std::filesystem::exists(csv));
  CHECK(std::filesystem::exists(summary.at("header_json").get<std::string>()));
  CHECK(summary.at("rows") == 400);
  CHECK(summary.at("final_grad_map_norm").get<double>() <
        summary.at("final_running_mean").get<double>());

  // identical (config, seed): byte-identical trace files
  config["output"] = {{"dir", (dir / "b").string()}};
  char* second_raw = nullptr;
  REQUIRE(blo_run(config.dump().c_str(), &second_raw) == BLO_OK);
  const json second = json::parse(take(second_raw));
  CHECK(file_bytes(csv) == file_bytes(second.at("trace_csv")));

  double slope = 0, r2 = 0;
  REQUIRE(blo_fit_rate(csv.c_str(), "grad_map_norm", 10, 400, &slope, &r2) == BLO_OK);
  CHECK(slope < -0.3);  // the deterministic solver converges fast

  CHECK(blo_fit_rate(csv.c_str(), "grad_map_norm", 399, 400, &slope, &r2) ==
        BLO_ERR_UNAVAILABLE);
  CHECK(blo_fit_rate(csv.c_str(), "no_such", 10, 400, &slope, &r2) ==
        BLO_ERR_INVALID_ARGUMENT);
  CHECK(blo_run("{\"problem\":{}}", nullptr) == BLO_ERR_CONFIG);
}

TEST_CASE("verify and compare through the C API") {
  char* report_raw = nullptr;
  REQUIRE(blo_verify("spectral", 1, &report_raw) == BLO_OK);
  const json report = json::parse(take(report_raw));
  CHECK(report.at("all_pass") == true);
  CHECK(report.at("results").size() >= 5);

  CHECK(blo_verify("nope", 1, &report_raw) == BLO_ERR_INVALID_ARGUMENT);

  // the estimator suite crosses the whole stack (oracles + fd reference)
  char* hg_raw = nullptr;
  REQUIRE(blo_verify("hypergrad", 1, &hg_raw) == BLO_OK);
  CHECK(json::parse(take(hg_raw)).at("all_pass") == true);

  const auto dir = work_dir() / "compare";
  std::filesystem::remove_all(dir);
  json config;
  config["problem"] = {{"family", "quad"}, {"d", 6}, {"p", 6}, {"seed", 5}};
  json mg = {{"name", "mgbio"}, {"gamma", 0.05}, {"lambda", 0.1}, {"T", 200},
             {"schedule", {{"variant", "constant"}, {"eta", 1.0}}}};
  json mg2 = mg;
  config["solvers"] = {mg, mg2};
  config["seeds"] = 2;
  config["threshold"] = 1e-3;
  config["output"] = {{"dir", dir.string()}};

  char* cmp_raw = nullptr;
  REQUIRE(blo_compare(config.dump().c_str(), &cmp_raw) == BLO_OK);
  const json cmp = json::parse(take(cmp_raw));
  CHECK(std::filesystem::exists(cmp.at("summary_csv").get<std::string>()));
  CHECK(std::filesystem::exists(cmp.at("verdict_json").get<std::string>()));
  // identical solvers with identical seeds: every seed ties
  const json pair = cmp.at("pairwise").at(0);
  CHECK(pair.at("ties") == 2);
}
