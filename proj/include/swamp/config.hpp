#pragma once

// Experiment configuration: a flat key=value document with dotted section
// keys. Lines starting with '#' are comments. See README for the grammar.

#include "swamp/lottery.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace swamp {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string source;  // blobs | spirals | idx
  Index train_size = 2000;
  Index test_size = 1000;
  double noise = 0.2;
  std::uint64_t seed = 7;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  Index limit = 0;       // 0 keeps every sample
  Index test_limit = 0;
  double holdout_fraction = 0.1;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ExperimentConfig {
  ModelSpec model;
  DataConfig data;
  std::uint64_t seed = 0;
  Index cycles = 10;
  double keep_ratio = 0.8;
  Index particles = 4;
  std::vector<Index> particle_schedule;
  long rewind_steps = 0;
  float ticket_lr = 0.1f;
  long epochs = 20;
  Index batch_size = 64;
  SgdConfig sgd;
  SwaConfig swa;
  PrunableKinds prunable = PrunableKinds::Auto;
  long eval_every_epochs = 0;
  Index hessian_probes = 100;
  Index hessian_batch = 256;
  int threads = 1;
  bool save_particles = false;
  std::string out = "runs/default";
};

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

using ConfigMap = std::map<std::string, std::string>;

/// Parses "key = value" lines; later keys override earlier ones.
ConfigMap parse_config_text(const std::string& text);

ExperimentConfig config_from_map(const ConfigMap& map);
ConfigMap config_to_map(const ExperimentConfig& cfg);

/// Every key, sorted, one per line. parse(to_text(c)) == c.
std::string to_text(const ExperimentConfig& cfg);

/// Reads a config file and applies "key=value" overrides in order.
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& overrides);

/// Digest over every key that influences results (excludes out and threads).
std::uint64_t config_digest(const ExperimentConfig& cfg);

/// Parses "dense:64,relu,conv:8:3:same,flatten" against an input shape;
/// dense:OUT and conv:OUT:K infer their input size.
std::vector<LayerSpec> parse_layers(const std::string& text, const Shape& input_shape);
Shape parse_shape(const std::string& text);

LotteryConfig lottery_config(const ExperimentConfig& cfg);
void configure_setup(TrainSetup& setup, const ExperimentConfig& cfg);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace swamp
