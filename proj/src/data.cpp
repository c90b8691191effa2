#include "swamp/data.hpp"

#include "swamp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace swamp {

namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError("idx: unexpected end of file in header of " + path.string());
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

// rank-1 features: one channel per feature; {C,H,W}: C channels
Index channel_count(const Shape& feature_shape) { return feature_shape[0]; }

Index channel_of(const Shape& feature_shape, Index feature) {
  if (feature_shape.size() == 1) return feature;
  const Index plane = shape_numel(feature_shape) / feature_shape[0];
  return feature / plane;
}

}  // namespace

Tensorf Dataset::batch(std::span<const Index> indices) const {
  const Index n = static_cast<Index>(indices.size());
  Shape shape = feature_shape;
  shape.insert(shape.begin(), n);
  Tensorf out(shape);
  const Index f = inputs.cols();
  for (Index i = 0; i < n; ++i) {
    out.data().segment(i * f, f) = inputs.row(indices[static_cast<std::size_t>(i)]).transpose();
  }
  return out;
}

std::vector<int> Dataset::batch_labels(std::span<const Index> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

Tensorf Dataset::all() const {
  Shape shape = feature_shape;
  shape.insert(shape.begin(), size());
  return Tensorf(shape, Eigen::Map<const Eigen::VectorXf>(inputs.data(), inputs.size()));
}

NormStats compute_stats(const Dataset& ds) {
  const Index channels = channel_count(ds.feature_shape);
  std::vector<double> sum(static_cast<std::size_t>(channels), 0.0);
  std::vector<double> sq(static_cast<std::size_t>(channels), 0.0);
  std::vector<double> count(static_cast<std::size_t>(channels), 0.0);
  for (Index r = 0; r < ds.inputs.rows(); ++r) {
    for (Index f = 0; f < ds.inputs.cols(); ++f) {
      const auto c = static_cast<std::size_t>(channel_of(ds.feature_shape, f));
      const double v = ds.inputs(r, f);
      sum[c] += v;
      sq[c] += v * v;
      count[c] += 1.0;
    }
  }
  NormStats stats;
  for (std::size_t c = 0; c < sum.size(); ++c) {
    const double mean = count[c] > 0 ? sum[c] / count[c] : 0.0;
    const double var = count[c] > 0 ? std::max(0.0, sq[c] / count[c] - mean * mean) : 0.0;
    const double sd = std::sqrt(var);
    stats.mean.push_back(static_cast<float>(mean));
    stats.stddev.push_back(static_cast<float>(sd > 1e-12 ? sd : 1.0));
  }
  return stats;
}

void standardize(Dataset& ds, const NormStats& stats) {
  if (ds.standardized) throw DataError("standardize: dataset is already standardized");
  const Index channels = channel_count(ds.feature_shape);
  if (static_cast<Index>(stats.mean.size()) != channels || static_cast<Index>(stats.stddev.size()) != channels) {
    throw DataError("standardize: statistics for " + std::to_string(stats.mean.size()) + " channels, data has " +
                    std::to_string(channels));
  }
  for (Index f = 0; f < ds.inputs.cols(); ++f) {
    const auto c = static_cast<std::size_t>(channel_of(ds.feature_shape, f));
    ds.inputs.col(f) = (ds.inputs.col(f).array() - stats.mean[c]) / stats.stddev[c];
  }
  ds.stats = stats;
  ds.standardized = true;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::optional<Index> limit,
                 const NormStats* train_stats) {
  std::ifstream img(images, std::ios::binary);
  if (!img) throw DataError("idx: cannot open " + images.string());
  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw DataError("idx: cannot open " + labels.string());

  const std::uint32_t img_magic = read_be32(img, images);
  if (img_magic != kIdxImageMagic) {
    throw DataError("idx: " + images.string() + " has magic " + hex32(img_magic) + ", expected image magic " +
                    hex32(kIdxImageMagic));
  }
  const std::uint32_t count = read_be32(img, images);
  const std::uint32_t rows = read_be32(img, images);
  const std::uint32_t cols = read_be32(img, images);

  const std::uint32_t lab_magic = read_be32(lab, labels);
  if (lab_magic != kIdxLabelMagic) {
    throw DataError("idx: " + labels.string() + " has magic " + hex32(lab_magic) + ", expected label magic " +
                    hex32(kIdxLabelMagic));
  }
  const std::uint32_t label_count = read_be32(lab, labels);
  if (label_count != count) {
    throw DataError("idx: " + std::to_string(count) + " images but " + std::to_string(label_count) + " labels");
  }
  if (rows == 0 || cols == 0) throw DataError("idx: zero image dimension in " + images.string());

  Index n = static_cast<Index>(count);
  if (limit && *limit < n) n = *limit;
  const Index features = static_cast<Index>(rows) * static_cast<Index>(cols);

  Dataset ds;
  ds.feature_shape = {1, static_cast<Index>(rows), static_cast<Index>(cols)};
  ds.inputs.resize(n, features);
  std::vector<unsigned char> buf(static_cast<std::size_t>(features));
  for (Index i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
      throw DataError("idx: unexpected end of file in " + images.string() + " at image " + std::to_string(i));
    }
    for (Index f = 0; f < features; ++f) ds.inputs(i, f) = static_cast<float>(buf[static_cast<std::size_t>(f)]) / 255.0f;
  }
  std::vector<unsigned char> lbuf(static_cast<std::size_t>(n));
  if (n > 0 && !lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n))) {
    throw DataError("idx: unexpected end of file in " + labels.string());
  }
  int max_label = -1;
  for (unsigned char l : lbuf) {
    ds.labels.push_back(l);
    max_label = std::max<int>(max_label, l);
  }
  ds.classes = max_label + 1;
  ds.split = train_stats ? Split::Test : Split::Train;
  standardize(ds, train_stats ? *train_stats : compute_stats(ds));
  return ds;
}

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               std::span<const std::uint8_t> pixels, Index rows, Index cols, std::span<const std::uint8_t> label_bytes) {
  const auto count = static_cast<std::uint32_t>(label_bytes.size());
  if (static_cast<Index>(pixels.size()) != static_cast<Index>(count) * rows * cols) {
    throw DataError("write_idx: pixel buffer does not match count x rows x cols");
  }
  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) throw DataError("write_idx: cannot open output files");
  write_be32(img, kIdxImageMagic);
  write_be32(img, count);
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  write_be32(lab, kIdxLabelMagic);
  write_be32(lab, count);
  lab.write(reinterpret_cast<const char*>(label_bytes.data()), static_cast<std::streamsize>(label_bytes.size()));
}

SyntheticKind synthetic_kind_from(const std::string& name) {
  if (name == "blobs") return SyntheticKind::Blobs;
  if (name == "spirals") return SyntheticKind::Spirals;
  throw DataError("unknown synthetic dataset '" + name + "' (expected blobs or spirals)");
}

Dataset make_synthetic(SyntheticKind kind, Index n, int classes, double noise, std::uint64_t seed) {
  if (classes < 1 || n < classes) throw DataError("make_synthetic: need n >= classes >= 1");
  Dataset ds;
  ds.feature_shape = {2};
  ds.inputs.resize(n, 2);
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.classes = classes;
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    RngStream rng(seed, static_cast<std::uint64_t>(i));
    const double offset = 2.0 * std::numbers::pi * label / classes;
    double x = 0.0;
    double y = 0.0;
    if (kind == SyntheticKind::Blobs) {
      x = 3.0 * std::cos(offset) + noise * rng.normal();
      y = 3.0 * std::sin(offset) + noise * rng.normal();
    } else {
      // uniform position along the arm, so any contiguous slice covers whole arms
      const double t = rng.uniform();
      const double r = 0.25 + 2.75 * t + noise * rng.normal();
      const double theta = offset + 3.0 * std::numbers::pi * t;
      x = r * std::cos(theta);
      y = r * std::sin(theta);
    }
    ds.inputs(i, 0) = static_cast<float>(x);
    ds.inputs(i, 1) = static_cast<float>(y);
    ds.labels[static_cast<std::size_t>(i)] = label;
  }
  return ds;
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& train, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw DataError("split_holdout: fraction must lie in [0, 1)");
  const Index hold = static_cast<Index>(std::floor(fraction * static_cast<double>(train.size())));
  const Index keep = train.size() - hold;
  Dataset head = train;
  Dataset tail = train;
  head.inputs = train.inputs.topRows(keep);
  head.labels.assign(train.labels.begin(), train.labels.begin() + keep);
  tail.inputs = train.inputs.bottomRows(hold);
  tail.labels.assign(train.labels.begin() + keep, train.labels.end());
  tail.split = Split::Holdout;
  return {std::move(head), std::move(tail)};
}

std::vector<Index> batch_order(const BatchStream& stream, long epoch) {
  if (epoch < 0 || epoch >= stream.epochs) {
    throw std::out_of_range("batch_order: epoch " + std::to_string(epoch) + " outside stream of " +
                            std::to_string(stream.epochs) + " epochs");
  }
  std::vector<Index> perm(static_cast<std::size_t>(stream.length));
  for (Index i = 0; i < stream.length; ++i) perm[static_cast<std::size_t>(i)] = i;
  RngStream rng(stream.seed, static_cast<std::uint64_t>(epoch));
  for (Index i = stream.length - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

}  // namespace swamp
