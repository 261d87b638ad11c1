/*
 * Copyright 2026 The dpstat Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// dpstat: experiment runner, scaling fits, validation suite, data generator.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpstat/harness/experiment.hpp"
#include "dpstat/harness/synthetic.hpp"
#include "dpstat/harness/validation.hpp"

namespace {

using dpstat::json;

struct RunArgs {
  std::string config;
  std::optional<std::string> algorithm;
  std::vector<std::size_t> n, d;
  std::vector<double> eps;
  std::optional<double> delta;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::vector<std::string> overrides;
  bool timing = false;
};

int cmd_run(const RunArgs& a) {
  json doc = json::object();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    dpstat::require(static_cast<bool>(in), "cannot open config " + a.config);
    doc = json::parse(in, nullptr, false);
    dpstat::require(!doc.is_discarded() && doc.is_object(), "config " + a.config + " is not a JSON object");
  }
  if (a.algorithm) doc["algorithm"] = *a.algorithm;
  if (!a.n.empty()) doc["grid"]["n"] = a.n;
  if (!a.d.empty()) doc["grid"]["d"] = a.d;
  if (!a.eps.empty()) doc["grid"]["eps"] = a.eps;
  if (a.delta) doc["delta"] = *a.delta;
  if (!a.seeds.empty()) doc["seeds"] = a.seeds;
  if (a.out) doc["output_dir"] = *a.out;
  if (a.workers) doc["workers"] = *a.workers;
  if (a.timing) doc["record_timing"] = true;
  for (const auto& o : a.overrides) dpstat::apply_override(doc, o);
  const auto cfg = dpstat::config_from_json(doc);

  const auto res = dpstat::run_experiment(cfg);
  std::size_t bad = 0;
  for (const auto& p : res.points) {
    if (p.row.status == "ok") continue;
    ++bad;
    std::fprintf(stderr, "dpstat: %s at n=%zu d=%zu eps=%g seed=%llu: %s\n", p.row.status.c_str(),
                 p.row.n, p.row.d, p.row.eps, static_cast<unsigned long long>(p.row.seed),
                 p.row.detail.c_str());
  }
  std::printf("wrote %s (%zu rows, %zu failed) and %s\n", res.csv_path.string().c_str(),
              res.points.size(), bad, res.ledger_path.string().c_str());
  return bad == 0 ? 0 : 3;
}

int cmd_fit(const std::string& csv, const std::string& x, const std::string& y, bool all_rows) {
  std::ifstream in(csv);
  dpstat::require(static_cast<bool>(in), "cannot open " + csv);
  const auto fit = dpstat::fit_csv_columns(in, x, y, !all_rows);
  std::printf("slope=%.6g intercept=%.6g r2=%.6g points=%zu\n", fit.slope, fit.intercept, fit.r2,
              fit.points.size());
  return 0;
}

int cmd_check(const dpstat::ValidationOptions& opts) {
  std::size_t failed = 0;
  const auto results = dpstat::run_validation_suite(opts, [&](const dpstat::CheckResult& r) {
    if (r.skipped) {
      std::printf("[SKIP] criterion %d: %s\n", r.id, r.title.c_str());
      return;
    }
    if (!r.pass) ++failed;
    std::printf("[%s] criterion %d: %s (%.1f s)\n", r.pass ? "PASS" : "FAIL", r.id, r.title.c_str(),
                r.seconds);
    for (const auto& line : r.lines) std::printf("        %s\n", line.c_str());
    std::fflush(stdout);
  });
  std::printf("%zu checks run, %zu failed\n", results.size(), failed);
  return failed == 0 ? 0 : 1;
}

struct GenArgs {
  std::string kind = "glm_fullrank";
  std::size_t n = 0, d = 0, rank = 1;
  std::uint64_t seed = 0;
  double B = 1.0, label_noise = 0.1;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  dpstat::SyntheticOptions opt{a.B, a.label_noise};
  const auto data = dpstat::gen_synthetic(dpstat::parse_synthetic_kind(a.kind), a.n, a.d, a.rank, a.seed, opt);
  const std::filesystem::path path(a.out);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  dpstat::require(f.good(), "cannot write " + a.out);
  dpstat::write_dataset_csv(f, data);
  f.close();
  dpstat::require(!f.fail(), "failed writing " + a.out);
  std::printf("wrote %zu samples (d=%zu) to %s\n", data.size(), data.dim(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dpstat: private stationary-point optimizers and benchmark harness"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "run an experiment grid and write CSV results");
  run_cmd->add_option("--config", run.config, "JSON experiment config")->check(CLI::ExistingFile);
  run_cmd->add_option("--algorithm", run.algorithm,
                      "spiderboost | tree_spider | rr_noisy_gd | rr_phased_sgd | jl_spiderboost | jl_rr");
  run_cmd->add_option("--n", run.n, "sample sizes")->delimiter(',');
  run_cmd->add_option("--d", run.d, "dimensions")->delimiter(',');
  run_cmd->add_option("--eps", run.eps, "privacy epsilons")->delimiter(',');
  run_cmd->add_option("--delta", run.delta, "privacy delta");
  run_cmd->add_option("--seed", run.seeds, "seeds")->delimiter(',');
  run_cmd->add_option("--out", run.out, "output directory");
  run_cmd->add_option("--workers", run.workers, "worker threads (0: all cores)");
  run_cmd->add_option("--override", run.overrides, "KEY=VALUE on the config document (repeatable)");
  run_cmd->add_flag("--timing", run.timing, "record wall-clock time per row");

  std::string fit_csv, fit_x = "n", fit_y = "grad_norm";
  bool fit_all = false;
  auto* fit_cmd = app.add_subcommand("fit", "log-log scaling fit of one CSV column against another");
  fit_cmd->add_option("--csv", fit_csv, "results CSV")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--x", fit_x, "x column");
  fit_cmd->add_option("--y", fit_y, "y column");
  fit_cmd->add_flag("--all-rows", fit_all, "fit every row instead of per-x medians");

  dpstat::ValidationOptions check;
  check.out_dir = (std::filesystem::temp_directory_path() / "dpstat_check").string();
  auto* check_cmd = app.add_subcommand("check", "run the invariant and validation suite");
  check_cmd->add_flag("--quick", check.quick, "skip the long statistical checks");
  check_cmd->add_option("--only", check.only, "criterion ids to run")->delimiter(',');
  check_cmd->add_option("--out", check.out_dir, "directory for experiment CSVs");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "write a synthetic dataset as CSV");
  gen_cmd->add_option("--kind", gen.kind, "glm_lowrank | glm_fullrank | huber_cluster");
  gen_cmd->add_option("--n", gen.n, "samples")->required();
  gen_cmd->add_option("--d", gen.d, "dimension")->required();
  gen_cmd->add_option("--rank", gen.rank, "planted rank (glm_lowrank)");
  gen_cmd->add_option("--seed", gen.seed, "seed");
  gen_cmd->add_option("--B", gen.B, "huber_cluster scale");
  gen_cmd->add_option("--label-noise", gen.label_noise, "GLM label noise");
  gen_cmd->add_option("--out", gen.out, "output CSV")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run_cmd) return cmd_run(run);
    if (*fit_cmd) return cmd_fit(fit_csv, fit_x, fit_y, fit_all);
    if (*check_cmd) return cmd_check(check);
    if (*gen_cmd) return cmd_gen(gen);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dpstat: error: %s\n", e.what());
    return 2;
  }
  return 0;
}
