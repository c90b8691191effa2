#include "swamp/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace swamp {

namespace fs = std::filesystem;

std::vector<Index> parse_index_list(const std::string& text) {
  std::vector<Index> out;
  std::istringstream in(text);
  std::string item;
  auto num = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return static_cast<Index>(v);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse '" + s + "' in value list '" + text + "'");
    }
  };
  while (std::getline(in, item, ',')) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(num(item));
      continue;
    }
    const Index lo = num(item.substr(0, dots));
    const Index hi = num(item.substr(dots + 2));
    if (hi < lo) throw ConfigError("empty range '" + item + "'");
    for (Index v = lo; v <= hi; ++v) out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty value list");
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {std::nan(""), std::nan("")};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

namespace {

struct PointOutcome {
  bool ok = false;
  std::vector<CycleSummary> summary;
};

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

// Runs (or reuses) one sweep point. Failures are reported, not thrown.
PointOutcome run_point(ExperimentConfig cfg, Command cmd, const fs::path& dir, std::ostream& log,
                       const std::optional<Mask>& mask = std::nullopt) {
  cfg.out = dir.string();
  PointOutcome outcome;
  try {
    if (experiment_complete(cfg, cmd, dir, mask.has_value())) {
      log << "skip " << dir.string() << " (complete)\n";
    } else {
      log << "run  " << dir.string() << "\n" << std::flush;
      RunOptions opts;
      opts.fixed_mask = mask;
      run_experiment(cfg, cmd, opts);
    }
    outcome.summary = read_summary(dir / "summary.csv");
    outcome.ok = true;
  } catch (const std::exception& e) {
    log << "FAILED " << dir.string() << ": " << e.what() << "\n";
  }
  return outcome;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string status_of(std::size_t failed) { return failed ? "failed:" + std::to_string(failed) : "ok"; }

int sparsity_curve(const ExperimentConfig& base, const SweepRequest& req, const std::vector<std::uint64_t>& seeds,
                   std::ostream& csv, std::ostream& log) {
  const Index cycles = *std::max_element(req.values.begin(), req.values.end());
  int failures = 0;
  csv << "method,cycle,sparsity,acc_mean,acc_std,nll_mean,nll_std,seeds,status\n";
  for (const auto& method : req.methods) {
    const Command cmd = command_from(method);
    std::vector<PointOutcome> outs;
    for (auto seed : seeds) {
      ExperimentConfig cfg = base;
      cfg.seed = seed;
      cfg.cycles = cycles;
      outs.push_back(run_point(cfg, cmd, fs::path(base.out) / "sparsity-curve" / (method + "_" + seed_tag(seed)), log));
    }
    std::size_t failed = 0;
    for (const auto& o : outs) failed += o.ok ? 0 : 1;
    failures += static_cast<int>(failed);
    for (Index c : req.values) {
      std::vector<double> acc, nll;
      double sparsity = std::nan("");
      for (const auto& o : outs) {
        if (!o.ok || c >= static_cast<Index>(o.summary.size())) continue;
        acc.push_back(o.summary[static_cast<std::size_t>(c)].test_acc);
        nll.push_back(o.summary[static_cast<std::size_t>(c)].test_nll);
        sparsity = o.summary[static_cast<std::size_t>(c)].sparsity;
      }
      const auto [am, as] = mean_std(acc);
      const auto [nm, ns] = mean_std(nll);
      csv << method << ',' << c << ',' << fmt(sparsity) << ',' << fmt(am) << ',' << fmt(as) << ',' << fmt(nm) << ','
          << fmt(ns) << ',' << acc.size() << ',' << status_of(failed) << '\n';
    }
  }
  return failures;
}

int particle_count(const ExperimentConfig& base, const SweepRequest& req, const std::vector<std::uint64_t>& seeds,
                   std::ostream& csv, std::ostream& log) {
  int failures = 0;
  std::vector<std::vector<PointOutcome>> all;
  for (Index n : req.values) {
    std::vector<PointOutcome> outs;
    for (auto seed : seeds) {
      ExperimentConfig cfg = base;
      cfg.seed = seed;
      cfg.particles = n;
      cfg.particle_schedule.clear();
      outs.push_back(run_point(cfg, Command::Swamp,
                               fs::path(base.out) / "particle-count" / ("n" + std::to_string(n) + "_" + seed_tag(seed)),
                               log));
    }
    all.push_back(std::move(outs));
  }
  // one row per particle count, one column pair per pruned cycle
  std::map<Index, double> sparsity;
  for (const auto& outs : all) {
    for (const auto& o : outs) {
      if (!o.ok) continue;
      for (const auto& r : o.summary) sparsity.emplace(r.cycle, r.sparsity);
    }
  }
  csv << "particles";
  for (const auto& [c, s] : sparsity) {
    if (c == 0) continue;
    char buf[64];
    std::snprintf(buf, sizeof buf, "acc_mean@%.4f,acc_std@%.4f", s, s);
    csv << ',' << buf;
  }
  csv << ",seeds,status\n";
  for (std::size_t i = 0; i < all.size(); ++i) {
    std::size_t failed = 0;
    for (const auto& o : all[i]) failed += o.ok ? 0 : 1;
    failures += static_cast<int>(failed);
    csv << req.values[i];
    for (const auto& [c, s] : sparsity) {
      if (c == 0) continue;
      std::vector<double> acc;
      for (const auto& o : all[i]) {
        if (o.ok && c < static_cast<Index>(o.summary.size())) acc.push_back(o.summary[static_cast<std::size_t>(c)].test_acc);
      }
      const auto [m, sd] = mean_std(acc);
      csv << ',' << fmt(m) << ',' << fmt(sd);
    }
    csv << ',' << (seeds.size() - failed) << ',' << status_of(failed) << '\n';
  }
  return failures;
}

int mask_transplant(const ExperimentConfig& base, const SweepRequest& req, const std::vector<std::uint64_t>& seeds,
                    std::ostream& csv, std::ostream& log) {
  int failures = 0;
  csv << "sparsity_cycle,sparsity,mask,training,acc_mean,acc_std,nll_mean,nll_std,seeds,status\n";
  const fs::path root = fs::path(base.out) / "mask-transplant";
  for (Index c : req.values) {
    // results[mask][training] -> per-seed outcomes
    std::map<std::string, std::map<std::string, std::vector<PointOutcome>>> results;
    double sparsity = std::nan("");
    for (auto seed : seeds) {
      ExperimentConfig cfg = base;
      cfg.seed = seed;
      cfg.cycles = c;
      for (const std::string source : {"imp", "swamp"}) {
        const fs::path src_dir = root / (source + "-mask_c" + std::to_string(c) + "_" + seed_tag(seed));
        const PointOutcome src = run_point(cfg, command_from(source), src_dir, log);
        std::optional<Mask> mask;
        if (src.ok) {
          try {
            const Checkpoint ck = load_checkpoint(src_dir / cycle_checkpoint_name(c), &cfg.model);
            mask = ck.mask;
            sparsity = ck.sparsity;
          } catch (const std::exception& e) {
            log << "FAILED reading mask from " << src_dir.string() << ": " << e.what() << "\n";
          }
        }
        for (const std::string training : {"sgd", "swamp"}) {
          const Command cmd = training == "sgd" ? Command::Imp : Command::Swamp;
          const fs::path dir =
              root / ("train-" + training + "_mask-" + source + "_c" + std::to_string(c) + "_" + seed_tag(seed));
          if (!mask) {
            results[source][training].push_back({});
            continue;
          }
          results[source][training].push_back(run_point(cfg, cmd, dir, log, mask));
        }
      }
    }
    for (const std::string source : {"imp", "swamp"}) {
      for (const std::string training : {"sgd", "swamp"}) {
        const auto& outs = results[source][training];
        std::vector<double> acc, nll;
        std::size_t failed = 0;
        for (const auto& o : outs) {
          if (!o.ok || o.summary.empty()) {
            ++failed;
            continue;
          }
          acc.push_back(o.summary.back().test_acc);
          nll.push_back(o.summary.back().test_nll);
        }
        failures += static_cast<int>(failed);
        const auto [am, as] = mean_std(acc);
        const auto [nm, ns] = mean_std(nll);
        csv << c << ',' << fmt(sparsity) << ',' << source << ',' << training << ',' << fmt(am) << ',' << fmt(as) << ','
            << fmt(nm) << ',' << fmt(ns) << ',' << acc.size() << ',' << status_of(failed) << '\n';
      }
    }
  }
  return failures;
}

}  // namespace

int run_sweep(const ExperimentConfig& cfg, const SweepRequest& request, std::ostream& log) {
  if (request.values.empty()) throw ConfigError("sweep: no values given");
  std::vector<std::uint64_t> seeds = request.seeds;
  if (seeds.empty()) seeds.push_back(cfg.seed);
  fs::create_directories(cfg.out);
  std::ostringstream csv;
  int failures = 0;
  if (request.axis == "sparsity-curve") {
    for (Index v : request.values) {
      if (v < 0) throw ConfigError("sweep: cycle values must be non-negative");
    }
    failures = sparsity_curve(cfg, request, seeds, csv, log);
  } else if (request.axis == "particle-count") {
    for (Index v : request.values) {
      if (v < 1) throw ConfigError("sweep: particle counts must be at least 1");
    }
    failures = particle_count(cfg, request, seeds, csv, log);
  } else if (request.axis == "mask-transplant") {
    for (Index v : request.values) {
      if (v < 1) throw ConfigError("sweep: mask-transplant values are prune cycles (>= 1)");
    }
    failures = mask_transplant(cfg, request, seeds, csv, log);
  } else {
    throw ConfigError("unknown sweep axis '" + request.axis + "' (expected sparsity-curve, particle-count or mask-transplant)");
  }
  std::ofstream out(fs::path(cfg.out) / "sweep.csv", std::ios::trunc);
  out << csv.str();
  if (!out) throw std::runtime_error("cannot write sweep.csv");
  return failures;
}

}  // namespace swamp
