#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace swamp;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// metrics rows without the trailing wall-time column
std::vector<std::string> timeless_metrics(const fs::path& p) {
  auto rows = lines_of(p);
  for (auto& r : rows) r = r.substr(0, r.rfind(','));
  return rows;
}

}  // namespace

TEST_CASE("resolved configs per command") {
  const ExperimentConfig c = testing::desk_config("unused");
  const ExperimentConfig imp = resolve_config(c, Command::Imp);
  CHECK(imp.particles == 1);
  CHECK_FALSE(imp.swa.enabled);
  CHECK(imp.cycles == c.cycles);
  const ExperimentConfig dense = resolve_config(c, Command::Dense);
  CHECK(dense.cycles == 0);
  CHECK(resolve_config(c, Command::Swamp) == c);
  CHECK(resolve_config(c, Command::Swamp, true).cycles == 0);
  CHECK(command_from("swamp") == Command::Swamp);
  CHECK_THROWS_AS(command_from("lottery"), ConfigError);
}

TEST_CASE("a run writes every artifact and the metrics agree with the masks") {
  const auto dir = testing::scratch_dir("exp_artifacts");
  ExperimentConfig c = testing::desk_config(dir, 8, 200);
  c.eval_every_epochs = 2;
  c.save_particles = true;
  const ExperimentResult r = run_experiment(c, Command::Swamp);
  for (const char* f : {"config.resolved", "metrics.csv", "summary.csv", "ticket.ckpt", "cycle_00.ckpt",
                        "cycle_01.ckpt", "cycle_02.ckpt"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  CHECK(config_from_map(parse_config_text([&] {
          std::ifstream in(dir / "config.resolved");
          std::stringstream ss;
          ss << in.rdbuf();
          return ss.str();
        }())) == resolve_config(c, Command::Swamp));

  const auto metrics = lines_of(dir / "metrics.csv");
  REQUIRE(!metrics.empty());
  CHECK(metrics[0] == kMetricsHeader);
  // 3 cycles x (2 particles + average + 2 epoch rows)
  CHECK(metrics.size() == 1 + 3 * 5);

  REQUIRE(r.cycles.size() == 3);
  const auto summary = read_summary(dir / "summary.csv");
  REQUIRE(summary.size() == 3);
  for (Index k = 0; k < 3; ++k) {
    const Checkpoint ck = load_checkpoint(dir / cycle_checkpoint_name(k), &c.model);
    CHECK(ck.cycle == k);
    CHECK(summary[static_cast<std::size_t>(k)].sparsity == doctest::Approx(sparsity_of(ck.mask)).epsilon(1e-9));
    CHECK(checkpoint_particles(ck, c.model).size() == 2);
    for (const auto& row : r.metrics) {
      if (row.cycle == k) CHECK(row.sparsity == sparsity_of(ck.mask));
    }
  }
  CHECK(summary[0].sparsity == 0.0);
  CHECK(summary[2].sparsity > summary[1].sparsity);
  CHECK(experiment_complete(c, Command::Swamp, dir));
  CHECK_FALSE(experiment_complete(apply_overrides(c, {"epochs=5"}), Command::Swamp, dir));
  CHECK_FALSE(experiment_complete(c, Command::Imp, dir));
}

TEST_CASE("identical runs produce identical bytes") {
  const auto a = testing::scratch_dir("exp_det_a");
  const auto b = testing::scratch_dir("exp_det_b");
  run_experiment(testing::desk_config(a, 8, 200), Command::Swamp);
  run_experiment(testing::desk_config(b, 8, 200), Command::Swamp);
  for (const char* f : {"ticket.ckpt", "cycle_00.ckpt", "cycle_01.ckpt", "cycle_02.ckpt", "summary.csv"}) {
    CHECK_MESSAGE(testing::file_bytes(a / f) == testing::file_bytes(b / f), f);
  }
  CHECK(timeless_metrics(a / "metrics.csv") == timeless_metrics(b / "metrics.csv"));
}

TEST_CASE("one SGD particle without averaging reproduces IMP exactly") {
  const auto a = testing::scratch_dir("exp_imp");
  const auto b = testing::scratch_dir("exp_swamp1");
  run_experiment(testing::desk_config(a, 8, 200), Command::Imp);
  ExperimentConfig s = testing::desk_config(b, 8, 200);
  s.particles = 1;
  s.swa.enabled = false;
  run_experiment(s, Command::Swamp);
  for (const char* f : {"cycle_00.ckpt", "cycle_01.ckpt", "cycle_02.ckpt"}) {
    CHECK_MESSAGE(testing::file_bytes(a / f) == testing::file_bytes(b / f), f);
  }
}

TEST_CASE("a fixed mask trains a single cycle under it") {
  const auto src = testing::scratch_dir("exp_mask_src");
  const ExperimentConfig c = testing::desk_config(src, 8, 200);
  run_experiment(c, Command::Imp);
  const Mask mask = load_checkpoint(src / "cycle_02.ckpt", &c.model).mask;
  const auto dst = testing::scratch_dir("exp_mask_dst");
  RunOptions opt;
  opt.fixed_mask = mask;
  const ExperimentResult r = run_experiment(testing::desk_config(dst, 8, 200), Command::Swamp, opt);
  REQUIRE(r.cycles.size() == 1);
  CHECK(load_checkpoint(dst / "cycle_00.ckpt").mask == mask);
  CHECK(experiment_complete(testing::desk_config(dst, 8, 200), Command::Swamp, dst, true));
}

TEST_CASE("sweeps resume finished points and mark failures") {
  const auto dir = testing::scratch_dir("exp_sweep");
  ExperimentConfig c = testing::desk_config(dir, 8, 200);
  c.cycles = 1;
  c.epochs = 2;
  SweepRequest req;
  req.axis = "particle-count";
  req.values = {1, 2};
  req.seeds = {1, 2};
  std::ostringstream log;
  CHECK(run_sweep(c, req, log) == 0);
  const auto rows = lines_of(dir / "sweep.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].rfind("particles,", 0) == 0);
  CHECK(rows[1].substr(rows[1].size() - 5) == ",2,ok");

  const fs::path point = dir / "particle-count" / "n2_seed1" / "summary.csv";
  REQUIRE(fs::exists(point));
  const auto stamp = fs::last_write_time(point);
  std::ostringstream again;
  CHECK(run_sweep(c, req, again) == 0);
  CHECK(fs::last_write_time(point) == stamp);
  CHECK(again.str().find("skip") != std::string::npos);
  CHECK(lines_of(dir / "sweep.csv") == rows);

  // a point whose data cannot be read fails without stopping the sweep
  const auto bad_dir = testing::scratch_dir("exp_sweep_bad");
  ExperimentConfig bad = c;
  bad.out = bad_dir.string();
  bad.data.source = "idx";
  bad.data.train_images = (bad_dir / "missing-images").string();
  bad.data.train_labels = (bad_dir / "missing-labels").string();
  bad.data.test_images = bad.data.train_images;
  bad.data.test_labels = bad.data.train_labels;
  std::ostringstream bad_log;
  CHECK(run_sweep(bad, req, bad_log) == 4);
  CHECK(bad_log.str().find("FAILED") != std::string::npos);
  const auto bad_rows = lines_of(bad_dir / "sweep.csv");
  REQUIRE(bad_rows.size() == 3);
  CHECK(bad_rows[1].find("failed:2") != std::string::npos);
}

TEST_CASE("sample statistics") {
  CHECK(std::isnan(mean_std({}).first));
  CHECK(mean_std({3.0}) == std::pair<double, double>{3.0, 0.0});
  const auto [m, s] = mean_std({1.0, 2.0, 3.0});
  CHECK(m == 2.0);
  CHECK(s == doctest::Approx(1.0));
}
