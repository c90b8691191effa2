#include "swamp/checkpoint.hpp"

#include "swamp/config.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace swamp {

namespace {

constexpr char kMagic[4] = {'S', 'W', 'M', 'P'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  template <class T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointError("checkpoint: unexpected end of file");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

Checkpoint make_checkpoint(const ModelSpec& spec, const ParamVector& params, const Mask& mask, std::uint32_t cycle,
                           std::uint64_t config_digest, std::uint64_t seed,
                           const std::vector<Eigen::VectorXf>& particles) {
  Checkpoint c;
  c.spec_digest = spec.digest();
  c.cycle = cycle;
  c.sparsity = sparsity_of(mask);
  c.config_digest = config_digest;
  c.seed = seed;
  c.mask = mask;
  for (const auto& s : params.segments) {
    c.tensors.push_back({s.name, Tensorf(s.shape, params.values.segment(s.offset, s.size()))});
  }
  for (std::size_t n = 0; n < particles.size(); ++n) {
    if (particles[n].size() != params.dim()) throw CheckpointError("make_checkpoint: particle size mismatch");
    for (const auto& s : params.segments) {
      c.tensors.push_back({"particle" + std::to_string(n + 1) + "." + s.name,
                           Tensorf(s.shape, particles[n].segment(s.offset, s.size()))});
    }
  }
  return c;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(ckpt.spec_digest);
  w.put<std::uint32_t>(ckpt.cycle);
  w.put<double>(ckpt.sparsity);
  w.put<std::uint64_t>(ckpt.config_digest);
  w.put<std::uint64_t>(ckpt.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.value.rank()));
    for (Index d : t.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(t.value.data().data(), static_cast<std::size_t>(t.value.size()) * sizeof(float));
  }
  const auto& bits = ckpt.mask.bits();
  w.put<std::uint64_t>(bits.size());
  std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  w.put_bytes(packed.data(), packed.size());
  w.put<std::uint64_t>(fnv1a64(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError("checkpoint: bad magic (not a SWMP file)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.spec_digest = r.get<std::uint64_t>();
  c.cycle = r.get<std::uint32_t>();
  c.sparsity = r.get<double>();
  c.config_digest = r.get<std::uint64_t>();
  c.seed = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    if (len > bytes.size()) throw CheckpointError("checkpoint: unexpected end of file");
    std::string name(len, '\0');
    r.get_bytes(name.data(), len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError("checkpoint: tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    Index numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<Index>(r.get<std::uint32_t>()));
      numel *= shape.back();
    }
    if (static_cast<std::size_t>(numel) * sizeof(float) > bytes.size()) {
      throw CheckpointError("checkpoint: unexpected end of file");
    }
    Eigen::VectorXf data(numel);
    r.get_bytes(data.data(), static_cast<std::size_t>(numel) * sizeof(float));
    c.tensors.push_back({std::move(name), Tensorf(std::move(shape), std::move(data))});
  }
  const auto prunable = r.get<std::uint64_t>();
  if (prunable / 8 > bytes.size()) throw CheckpointError("checkpoint: unexpected end of file");
  std::vector<std::uint8_t> packed((prunable + 7) / 8);
  r.get_bytes(packed.data(), packed.size());
  std::vector<std::uint8_t> bits(prunable);
  for (std::size_t i = 0; i < prunable; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  c.mask = Mask::from_bits(std::move(bits));
  const std::size_t body = r.pos();
  const auto stored = r.get<std::uint64_t>();
  if (r.pos() != bytes.size()) throw CheckpointError("checkpoint: trailing bytes after checksum");
  const auto actual = fnv1a64(bytes.data(), body);
  if (stored != actual) throw CheckpointError("checkpoint: checksum mismatch (file corrupted)");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize(ckpt);
  // write-then-rename so an interrupted save never leaves a half file under the final name
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint c = deserialize(bytes);
  if (expected && c.spec_digest != expected->digest()) {
    throw CheckpointError("checkpoint: model-spec digest mismatch (file " + hex(c.spec_digest) + ", model " +
                          hex(expected->digest()) + ")");
  }
  return c;
}

ParamVector checkpoint_params(const Checkpoint& ckpt, const ModelSpec& spec) {
  if (ckpt.spec_digest != spec.digest()) throw CheckpointError("checkpoint: model-spec digest mismatch");
  ParamVector p;
  p.segments = param_layout(spec);
  std::vector<Tensorf> tensors;
  for (const auto& s : p.segments) {
    const NamedTensor* found = nullptr;
    for (const auto& t : ckpt.tensors) {
      if (t.name == s.name) found = &t;
    }
    if (!found) throw CheckpointError("checkpoint: missing tensor " + s.name);
    tensors.push_back(found->value);
  }
  p.values = flatten(p.segments, tensors);
  return p;
}

std::vector<Eigen::VectorXf> checkpoint_particles(const Checkpoint& ckpt, const ModelSpec& spec) {
  const auto layout = param_layout(spec);
  std::vector<Eigen::VectorXf> out;
  for (std::size_t n = 1;; ++n) {
    const std::string prefix = "particle" + std::to_string(n) + ".";
    std::vector<Tensorf> tensors;
    for (const auto& s : layout) {
      for (const auto& t : ckpt.tensors) {
        if (t.name == prefix + s.name) tensors.push_back(t.value);
      }
    }
    if (tensors.empty()) break;
    if (tensors.size() != layout.size()) throw CheckpointError("checkpoint: incomplete tensors for " + prefix);
    out.push_back(flatten(layout, tensors));
  }
  return out;
}

}  // namespace swamp
