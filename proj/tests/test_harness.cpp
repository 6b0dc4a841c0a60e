#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lrm/errors.hpp"
#include "lrm/harness/commands.hpp"
#include "lrm/harness/config.hpp"
#include "lrm/harness/ensemble.hpp"
#include "lrm/parallel.hpp"

using namespace lrm;
using namespace lrm::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("lrm_harness_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string write_config(const std::string& name, const std::string& text) {
  const fs::path p = scratch_dir() / name;
  std::ofstream(p) << text;
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

CliOptions options(const std::string& path, const std::string& out = "out") {
  CliOptions o;
  o.config_path = path;
  o.out_dir = (scratch_dir() / out).string();
  return o;
}

std::string config_error(const std::string& text) {
  try {
    parse_config(nlohmann::json::parse(text));
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

const nlohmann::json* find_verdict(const nlohmann::json& manifest, const std::string& check) {
  for (const auto& v : manifest["verdicts"]) {
    if (v["check"] == check) return &v;
  }
  return nullptr;
}

const char* kMinimal = R"(
scheme: sgld
target: {name: gaussian, dim: 1}
schedule: {kind: constant, gamma: 0.1}
run: {iterations: 10, replicas: 2}
seed: 1
)";

}  // namespace

TEST_CASE("config parsing fills defaults and normalises") {
  const auto cfg = load_config(write_config("min.yaml", kMinimal));
  REQUIRE(cfg.schemes.size() == 1);
  CHECK(cfg.schemes[0] == Scheme::kSgld);
  CHECK(cfg.model.dim() == 1);
  CHECK(cfg.run.iterations == 10);
  CHECK(cfg.run.replicas == 2);
  CHECK(cfg.seed == 1);
  CHECK(cfg.metric.method == "auto");
  CHECK(cfg.snapshot["schedule"]["kind"] == "constant");
  const auto s = cfg.build_schedule();
  CHECK(s.gamma(3) == 0.1);
  CHECK(s.max_k() >= 10);
}

TEST_CASE("yaml and json forms are equivalent") {
  const auto a = load_config(write_config("a.yaml", kMinimal));
  const auto b = load_config(write_config("b.json", R"({"scheme": "sgld", "target": {"name": "gaussian", "dim": 1},
    "schedule": {"kind": "constant", "gamma": 0.1}, "run": {"iterations": 10, "replicas": 2}, "seed": 1})"));
  CHECK(a.snapshot == b.snapshot);
}

TEST_CASE("config errors carry key paths") {
  CHECK(config_error(R"({"scheme": "sgld", "bogus": 1})") == "bogus");
  CHECK(config_error(R"({"scheme": "hmc"})") == "scheme");
  CHECK(config_error(R"({"scheme": "sgld", "schedule": {"kind": "poly", "gamma": 0.1}})") == "schedule.gamma");
  CHECK(config_error(R"({"scheme": "sgld", "target": {"name": "nope"}})") == "target.name");
  CHECK(config_error(R"({"scheme": "sgld", "run": {"replicas": 0}})") == "run.replicas");
  CHECK(config_error(R"({"scheme": "sgld", "wapt": {"anchors": [100, 10]}})") == "wapt.anchors");
  CHECK(config_error(R"({"scheme": "sgld", "wapt": {"substeps": 2}})") == "wapt.substeps");
  CHECK(config_error(R"({"scheme": "ml"})") == "mirror");
  CHECK(config_error(R"({"scheme": "sgld", "metric": {"order": 3}})") == "metric.order");
  CHECK(config_error(R"({"scheme": "sgld", "run": {"x0": [1, 2, 3]}, "target": {"name": "gaussian", "dim": 2}})") == "run.x0");
}

TEST_CASE("overrides") {
  auto tree = read_config_file(write_config("o.yaml", kMinimal));
  apply_overrides(tree, {"run.iterations=25", "schedule.gamma=0.05", "schemes=[rmm, ormm]"});
  tree.erase("scheme");
  const auto cfg = parse_config(tree);
  CHECK(cfg.run.iterations == 25);
  CHECK(cfg.build_schedule().gamma(1) == 0.05);
  CHECK(cfg.schemes.size() == 2);
  CHECK_THROWS_AS(apply_overrides(tree, {"no_equals_sign"}), ConfigError);
}

TEST_CASE("target zoo") {
  const auto zoo = target_zoo();
  for (const char* name : {"gaussian", "gaussian_aniso", "mixture2", "repulsive", "flat"}) {
    CHECK(std::find(zoo.begin(), zoo.end(), name) != zoo.end());
  }
}

TEST_CASE("parallel_for covers every index and rethrows the lowest failure") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  try {
    parallel_for(10, 3, [](std::size_t i) {
      if (i == 7 || i == 4) throw std::runtime_error(std::to_string(i));
    });
    FAIL("expected rethrow");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "4");
  }
}

TEST_CASE("ensembles are independent of the worker count") {
  const auto cfg = load_config(write_config("e.yaml", kMinimal));
  const SchemeConfig sc = cfg.scheme_config(Scheme::kSgld);
  EnsembleOptions o;
  o.replicas = 9;
  o.iterations = 10;
  o.run.checkpoints = {5, 10};
  const auto a = run_ensemble(sc, {1, 0, Substream::kSchemeXi}, o);
  o.jobs = 4;
  const auto b = run_ensemble(sc, {1, 0, Substream::kSchemeXi}, o);
  CHECK(a.final_matrix() == b.final_matrix());
  CHECK(a.checkpoint_ks() == std::vector<long>{5, 10});
  CHECK(a.checkpoint_matrix(0).rows() == 9);
  CHECK(a.total_grad_calls() == 90);
}

TEST_CASE("run: smoke, manifest completeness and determinism") {
  const std::string path = write_config("smoke.yaml", kMinimal);
  const CommandResult r = cli_run(options(path, "det_a"));
  REQUIRE(r.exit_code == kExitOk);
  CHECK(r.manifest["trajectories"] == 2);
  CHECK(r.manifest["command"] == "run");
  for (const char* key : {"config", "version", "schedule_report", "constants", "verdicts", "outputs",
                          "wall_clock_seconds", "run_id"}) {
    CHECK_MESSAGE(r.manifest.contains(key), key);
  }
  for (const char* key : {"L_hat", "alpha_hat", "beta_hat", "P"}) CHECK(r.manifest["constants"].contains(key));
  const std::string id = r.manifest["run_id"];
  for (const auto& f : r.manifest["outputs"]) {
    const fs::path p = fs::path(r.run_dir) / f.get<std::string>();
    REQUIRE(fs::exists(p));
    CHECK(slurp(p).rfind("# run_id: " + id + "\n", 0) == 0);
  }
  const CommandResult again = cli_run(options(path, "det_b"));
  CHECK(slurp(fs::path(r.run_dir) / "metrics.csv") == slurp(fs::path(again.run_dir) / "metrics.csv"));
  CHECK(again.manifest["run_id"] == id);

  CliOptions reseeded = options(path, "det_c");
  reseeded.seed = 2;
  const CommandResult other = cli_run(reseeded);
  CHECK(other.manifest["run_id"] != id);
  CHECK(slurp(fs::path(r.run_dir) / "metrics.csv") != slurp(fs::path(other.run_dir) / "metrics.csv"));
}

TEST_CASE("run: records are optional") {
  CliOptions o = options(write_config("rec.yaml", kMinimal), "records");
  o.records = true;
  const CommandResult r = cli_run(o);
  REQUIRE(r.exit_code == kExitOk);
  const std::string rec = slurp(fs::path(r.run_dir) / "records" / "1.csv");
  CHECK(rec.find("k,gamma,grad_calls,norm_x,norm_v,norm_U,norm_b") != std::string::npos);
  CHECK(std::count(rec.begin(), rec.end(), '\n') == 12);
}

TEST_CASE("run: summable schedule is rejected unless forced") {
  const std::string path = write_config("poly2.yaml", R"(
scheme: sgld
target: {name: gaussian, dim: 1}
schedule: {kind: poly, c: 1.0, p: 2.0}
run: {iterations: 50, replicas: 2}
)");
  const CommandResult r = cli_run(options(path));
  CHECK(r.exit_code == kExitValidatorRejected);
  const auto* v = find_verdict(r.manifest, "schedule.rm_divergent");
  REQUIRE(v);
  CHECK((*v)["detail"] == "RM divergence condition fails");
  CHECK((*v)["status"] == "fail");
  CHECK(r.manifest["forced"] == false);
  CHECK_FALSE(fs::exists(fs::path(r.run_dir) / "metrics.csv"));

  CliOptions forced = options(path);
  forced.force = true;
  const CommandResult f = cli_run(forced);
  CHECK(f.exit_code == kExitOk);
  CHECK(f.manifest["forced"] == true);
}

TEST_CASE("run: configuration errors exit 1 without a run directory") {
  CliOptions o = options(write_config("bad.yaml", kMinimal));
  o.overrides = {"run.bogus=3"};
  const CommandResult r = cli_run(o);
  CHECK(r.exit_code == kExitConfigError);
  CHECK(r.run_dir.empty());
  CHECK(r.error.find("run.bogus") != std::string::npos);
}

TEST_CASE("run: divergence exits with the failure recorded") {
  const CommandResult r = cli_run(options(write_config("rep.yaml", R"(
scheme: sgld
target: {name: repulsive, dim: 1}
schedule: {kind: constant, gamma: 0.5}
run: {iterations: 5000, replicas: 3, x0: [1.0]}
)")));
  CHECK(r.exit_code == kExitSamplerFailure);
  CHECK(r.manifest["failure"]["kind"] == "FAIL_DIVERGED");
  CHECK(r.manifest["failure"]["iteration"].get<long>() > 0);
}

TEST_CASE("compare: oracle counters and zero SGLD bias") {
  const CommandResult r = cli_compare(options(write_config("cmp.yaml", R"(
schemes: [rmm, ormm, sgld]
target: {name: gaussian, dim: 2}
schedule: {kind: constant, gamma: 0.05}
run: {iterations: 1000, replicas: 32, checkpoint_every: 250}
seed: 3
)")));
  REQUIRE(r.exit_code == kExitOk);
  const std::string summary = slurp(fs::path(r.run_dir) / "summary.csv");
  CHECK(summary.find("\nrmm,") != std::string::npos);
  std::istringstream in(summary);
  std::string line;
  std::map<std::string, std::string> calls, chat;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("scheme", 0) == 0) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    calls[cells[0]] = cells[2];
    chat[cells[0]] = cells[4];
  }
  CHECK(calls["rmm"] == "2000");
  CHECK(calls["ormm"] == "1001");
  CHECK(chat["sgld"] == "0");
  const auto* v = find_verdict(r.manifest, "sgld.bias_zero");
  REQUIRE(v);
  CHECK((*v)["status"] == "pass");
  for (const char* s : {"rmm.final_mean", "ormm.final_mean", "sgld.final_mean"}) {
    REQUIRE(find_verdict(r.manifest, s));
    CHECK((*find_verdict(r.manifest, s))["status"] == "pass");
  }
  CHECK(cli_compare(options(write_config("cmp1.yaml", kMinimal))).exit_code == kExitConfigError);
}

TEST_CASE("wapt: sanity mode and config checks") {
  const CommandResult r = cli_wapt(options(write_config("ws.yaml", R"(
scheme: sgld
target: {name: gaussian, dim: 2}
schedule: {kind: constant, gamma: 0.1}
wapt: {anchors: [10, 20, 40], replicas: 8, sanity: true}
)")));
  REQUIRE(r.exit_code == kExitOk);
  CHECK((*find_verdict(r.manifest, "wapt.sanity_zero"))["status"] == "pass");
  CHECK((*find_verdict(r.manifest, "wapt.monotone_trend"))["status"] == "pass");
  CHECK(fs::exists(fs::path(r.run_dir) / "wapt.csv"));
  const CommandResult bad = cli_wapt(options(write_config("wb.yaml", R"(
scheme: sgld
target: {name: gaussian, dim: 1}
wapt: {anchors: [100, 50]}
)")));
  CHECK(bad.exit_code == kExitConfigError);
  const CommandResult short_schedule = cli_wapt(options(write_config("wc.yaml", R"(
scheme: sgld
target: {name: gaussian, dim: 1}
schedule: {kind: constant, gamma: 0.1, max_k: 50}
wapt: {anchors: [10, 40], replicas: 4}
)")));
  CHECK(short_schedule.exit_code == kExitConfigError);
}

TEST_CASE("validate") {
  SUBCASE("gaussian with the slowly decreasing schedule") {
    const CommandResult r = cli_validate(options(write_config("vg.yaml", R"(
scheme: sgld
target: {name: gaussian, dim: 2}
schedule: {kind: sqrtlog, c: 1.0}
)")));
    CHECK(r.exit_code == kExitOk);
    for (const char* c : {"gradient_consistency", "lipschitz", "dissipativity", "schedule.rm_divergent",
                          "schedule.rm_square_summable", "noise.martingale_difference"}) {
      REQUIRE_MESSAGE(find_verdict(r.manifest, c), c);
      CHECK_MESSAGE((*find_verdict(r.manifest, c))["status"] == "pass", c);
    }
    // The step-size condition is reported, with its warning severity.
    REQUIRE(find_verdict(r.manifest, "schedule.step_size_condition"));
    CHECK((*find_verdict(r.manifest, "schedule.step_size_condition"))["severity"] == "warning");
  }
  SUBCASE("repulsive field is flagged as a warning") {
    const CommandResult r = cli_validate(options(write_config("vr.yaml", R"(
scheme: sgld
target: {name: repulsive, dim: 2}
schedule: {kind: sqrtlog, c: 0.1}
pilot: {iterations: 20, replicas: 2}
)")));
    CHECK(r.exit_code == kExitOk);
    const auto* v = find_verdict(r.manifest, "dissipativity");
    REQUIRE(v);
    CHECK((*v)["status"] == "fail");
    CHECK((*v)["severity"] == "warning");
    CHECK((*v)["detail"].get<std::string>().find("NOT_DISSIPATIVE") != std::string::npos);
  }
  SUBCASE("mixture constants are reported with probe counts") {
    const CommandResult r = cli_validate(options(write_config("vm.yaml", R"(
scheme: rmm
target: {name: mixture2}
schedule: {kind: sqrtlog, c: 0.5}
)")));
    CHECK(r.exit_code == kExitOk);
    const auto& v = (*find_verdict(r.manifest, "dissipativity"))["value"];
    CHECK(v["alpha_hat"].get<double>() > 0.9);
    CHECK(v["beta_hat"].get<double>() > 0.0);
    CHECK(v["probes"].get<int>() > 0);
    CHECK(r.manifest["constants"]["C_b"].get<double>() > 0.0);
  }
}

TEST_CASE("output root resolution") {
  CHECK(resolve_out_root(std::string("x")) == "x");
  ::unsetenv("LRM_OUT_DIR");
  CHECK(resolve_out_root(std::nullopt) == "runs");
  ::setenv("LRM_OUT_DIR", "/tmp/elsewhere", 1);
  CHECK(resolve_out_root(std::nullopt) == "/tmp/elsewhere");
  ::unsetenv("LRM_OUT_DIR");
}
