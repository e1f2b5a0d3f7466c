#pragma once

// Binary model checkpoints.
//
// Layout (little-endian):
//   magic "SQGANCKP" | u32 version | u64 config hash | u64 body length
//   body: u32 block count, then per block
//         u32 name length | name | u32 rank | u64 extents[rank] | f64 values
//   u32 CRC-32 of every preceding byte
//
// Model structure (dims, layer widths, activations) is stored in blocks of
// its own so a checkpoint can be rebuilt without the training config.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sqgan/autodiff.hpp"
#include "sqgan/errors.hpp"
#include "sqgan/networks.hpp"
#include "sqgan/quantizer.hpp"

namespace sqgan {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'S', 'Q', 'G', 'A', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointPrefix = 8 + 4 + 8 + 8;

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

struct CheckpointInfo {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
};

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* src, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(src);
    bytes.insert(bytes.end(), p, p + n);
  }
  void block(const std::string& name, const ad::Shape& shape, std::span<const double> values) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    put_bytes(name.data(), name.size());
    put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t e : shape) put<std::uint64_t>(e);
    put_bytes(values.data(), values.size() * sizeof(double));
    ++blocks;
  }
  std::vector<std::uint8_t> bytes;
  std::uint32_t blocks = 0;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }
  void get_doubles(double* out, std::size_t n) {
    if (n > (n_ - pos_) / sizeof(double)) throw FormatError("checkpoint block overruns the body");
    std::memcpy(out, p_ + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  bool done() const { return pos_ == n_; }

 private:
  void need(std::size_t k) const {
    if (k > n_ - pos_) throw FormatError("checkpoint block overruns the body");
  }
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

inline void put_mlp(ByteWriter& w, const std::string& name, const Mlp& m) {
  const MlpSpec& s = m.spec();
  std::vector<double> widths(s.layer_widths.begin(), s.layer_widths.end());
  std::vector<double> acts;
  for (Activation a : s.activations) acts.push_back(static_cast<double>(static_cast<int>(a)));
  w.block(name + ".widths", {widths.size()}, widths);
  w.block(name + ".activations", {acts.size()}, acts);
  for (std::size_t l = 0; l < m.layers(); ++l) {
    w.block(name + ".layer" + std::to_string(l) + ".weight", m.weight(l).shape(), m.weight(l).data());
    w.block(name + ".layer" + std::to_string(l) + ".bias", m.bias(l).shape(), m.bias(l).data());
  }
}

using BlockMap = std::map<std::string, ad::Tensor>;

inline const ad::Tensor& block(const BlockMap& b, const std::string& name) {
  auto it = b.find(name);
  if (it == b.end()) throw FormatError("checkpoint is missing block '" + name + "'");
  return it->second;
}

inline std::size_t as_count(double v, const std::string& what) {
  if (!(v >= 0.0) || v != static_cast<double>(static_cast<std::size_t>(v)))
    throw FormatError("checkpoint field " + what + " is not a count");
  return static_cast<std::size_t>(v);
}

inline void copy_into(ad::Tensor& dst, const ad::Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw FormatError("checkpoint block '" + name + "' has shape " + ad::to_string(src.shape()) +
                      ", expected " + ad::to_string(dst.shape()));
  }
  std::copy(src.values().begin(), src.values().end(), dst.values().begin());
}

inline Mlp get_mlp(const BlockMap& b, const std::string& name) {
  MlpSpec spec;
  for (double v : block(b, name + ".widths").values()) spec.layer_widths.push_back(as_count(v, name + ".widths"));
  for (double v : block(b, name + ".activations").values()) {
    const std::size_t a = as_count(v, name + ".activations");
    if (a > static_cast<std::size_t>(Activation::none)) throw FormatError("unknown activation code in " + name);
    spec.activations.push_back(static_cast<Activation>(a));
  }
  try {
    spec.validate(name);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  Mlp m(spec);
  for (std::size_t l = 0; l < m.layers(); ++l) {
    const std::string wn = name + ".layer" + std::to_string(l) + ".weight";
    const std::string bn = name + ".layer" + std::to_string(l) + ".bias";
    copy_into(m.weight(l), block(b, wn), wn);
    copy_into(m.bias(l), block(b, bn), bn);
  }
  return m;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const GanModel& model, std::uint64_t config_hash) {
  detail::ByteWriter body;
  body.put<std::uint32_t>(0);  // block count, patched below
  const ModelDims& d = model.dims;
  const std::vector<double> dims = {double(d.d_z), double(d.d_w), double(d.s), double(d.data_dim)};
  body.block("model.dims", {4}, dims);
  detail::put_mlp(body, "mapper", model.mapper);
  detail::put_mlp(body, "generator", model.generator);
  detail::put_mlp(body, "discriminator", model.discriminator);
  const Codebook& cb = model.codebook;
  const std::vector<double> rbf = {cb.rbf_scale};
  body.block("codebook.codes", cb.codes.shape(), cb.codes.data());
  body.block("codebook.projection", cb.projection.shape(), cb.projection.data());
  body.block("codebook.rbf_scale", {1}, rbf);
  std::memcpy(body.bytes.data(), &body.blocks, sizeof body.blocks);

  detail::ByteWriter out;
  out.put_bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put<std::uint64_t>(config_hash);
  out.put<std::uint64_t>(body.bytes.size());
  out.put_bytes(body.bytes.data(), body.bytes.size());
  out.put<std::uint32_t>(crc32_of(out.bytes.data(), out.bytes.size()));
  return std::move(out.bytes);
}

// Validation order: length, magic, version, declared body length, checksum,
// then block parsing. No model is returned unless every check passes.
inline GanModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, CheckpointInfo* info = nullptr) {
  if (bytes.size() < kCheckpointPrefix + 4)
    throw TruncatedError("checkpoint is " + std::to_string(bytes.size()) + " bytes, shorter than its header");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw FormatError("not a checkpoint: bad magic bytes");
  detail::ByteReader head(bytes.data() + 8, kCheckpointPrefix - 8);
  const auto version = head.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) + ", this build reads " +
                       std::to_string(kCheckpointVersion));
  }
  const auto hash = head.get<std::uint64_t>();
  const auto body_len = head.get<std::uint64_t>();
  const std::size_t available = bytes.size() - kCheckpointPrefix - 4;
  if (body_len > available)
    throw TruncatedError("checkpoint body declares " + std::to_string(body_len) + " bytes, " +
                         std::to_string(available) + " present");
  if (body_len < available) throw FormatError("checkpoint has trailing bytes after its checksum");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(bytes.data(), bytes.size() - 4) != stored) throw ChecksumError("checkpoint checksum mismatch");

  detail::ByteReader body(bytes.data() + kCheckpointPrefix, body_len);
  const auto count = body.get<std::uint32_t>();
  detail::BlockMap blocks;
  for (std::uint32_t b = 0; b < count; ++b) {
    const auto name = body.get_string(body.get<std::uint32_t>());
    const auto rank = body.get<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint block '" + name + "' has rank " + std::to_string(rank));
    ad::Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(body.get<std::uint64_t>());
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e != 0 && n > (std::size_t{1} << 40) / e) throw FormatError("checkpoint block '" + name + "' too large");
      n *= e;
    }
    std::vector<double> values(n);
    body.get_doubles(values.data(), n);
    if (!blocks.emplace(name, ad::Tensor(shape, std::move(values))).second)
      throw FormatError("duplicate checkpoint block '" + name + "'");
  }
  if (!body.done()) throw FormatError("unparsed bytes at the end of the checkpoint body");

  GanModel m;
  const auto& dims = detail::block(blocks, "model.dims").values();
  if (dims.size() != 4) throw FormatError("model.dims must hold 4 values");
  m.dims = {detail::as_count(dims[0], "d_z"), detail::as_count(dims[1], "d_w"), detail::as_count(dims[2], "s"),
            detail::as_count(dims[3], "data_dim")};
  m.mapper = detail::get_mlp(blocks, "mapper");
  m.generator = detail::get_mlp(blocks, "generator");
  m.discriminator = detail::get_mlp(blocks, "discriminator");
  m.codebook.codes = detail::block(blocks, "codebook.codes");
  m.codebook.projection = detail::block(blocks, "codebook.projection");
  const auto& rbf = detail::block(blocks, "codebook.rbf_scale").values();
  if (rbf.size() != 1) throw FormatError("codebook.rbf_scale must hold one value");
  m.codebook.rbf_scale = rbf[0];
  if (m.codebook.codes.rank() != 2 || m.codebook.projection.rank() != 2 ||
      m.codebook.projection.cols() != m.codebook.codes.cols())
    throw FormatError("codebook blocks have inconsistent shapes");
  m.codebook.codes.set_requires_grad(true);
  m.codebook.projection.set_requires_grad(true);
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint describes an inconsistent model: ") + e.what());
  }
  if (info) *info = {version, hash};
  return m;
}

inline void save_checkpoint(const std::string& path, const GanModel& model, std::uint64_t config_hash) {
  const auto bytes = serialize_checkpoint(model, config_hash);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into " + path);
}

inline GanModel load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, info);
}

// Loads and checks the stored dimensions against the ones a caller expects.
inline GanModel load_checkpoint(const std::string& path, const ModelDims& expected, CheckpointInfo* info = nullptr) {
  GanModel m = load_checkpoint(path, info);
  if (!(m.dims == expected)) {
    throw DimensionError("checkpoint dims " + m.dims.to_string() + " do not match configured dims " +
                         expected.to_string());
  }
  return m;
}

}  // namespace sqgan
