#include "stairpool/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <map>

#include "stairpool/config.hpp"
#include "stairpool/error.hpp"
#include "stairpool/io.hpp"

namespace stairpool {

namespace {

class Writer {
 public:
  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}
  template <typename T>
  T uint() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw Error(Errc::CrcMismatch, "checkpoint body is truncated");
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, data, static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

struct Stored {
  Shape shape;
  std::vector<double> values;
  std::vector<double> momentum;
};

UNet fill(const ModelConfig& cfg, std::map<std::string, Stored>& stored, const std::vector<std::string>& order) {
  UNet model = build_unet(cfg, 0);
  for (Parameter* p : model.parameters()) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw Error(Errc::MissingParameter, "checkpoint lacks parameter " + p->name);
    if (it->second.shape != p->value.shape()) {
      throw Error(Errc::ShapeMismatch, "parameter " + p->name + " is " + shape_str(it->second.shape) + " in the checkpoint but " +
                                           shape_str(p->value.shape()) + " in the model");
    }
    p->value = Tensor(it->second.shape, std::move(it->second.values));
    p->momentum = it->second.momentum.empty() ? std::vector<double>(p->value.storage().size(), 0.0)
                                               : std::move(it->second.momentum);
    stored.erase(it);
  }
  if (!stored.empty()) {
    for (const auto& name : order) {
      if (stored.count(name)) throw Error(Errc::MissingParameter, "checkpoint parameter " + name + " is not in the model");
    }
  }
  return model;
}

UNet decode(const std::vector<std::uint8_t>& bytes, const ModelConfig* expected) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SPK1", 4) != 0) {
    throw Error(Errc::BadMagic, "not a checkpoint (missing SPK1 magic)");
  }
  if (bytes.size() < 4 + 2 + 4) throw Error(Errc::CrcMismatch, "checkpoint is truncated");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes, bytes.size());
  tail.raw(body);
  const auto stored_crc = tail.uint<std::uint32_t>();
  if (crc_of(bytes.data(), body) != stored_crc) throw Error(Errc::CrcMismatch, "checkpoint CRC32 does not match");

  Reader r(bytes, body);
  r.raw(4);
  const auto version = r.uint<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw Error(Errc::VersionUnsupported, "checkpoint version " + std::to_string(version) + " is not supported");
  }
  const ModelConfig cfg = parse_model_config(r.raw(r.uint<std::uint32_t>()));
  const auto count = r.uint<std::uint32_t>();
  std::map<std::string, Stored> stored;
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.raw(r.uint<std::uint16_t>());
    Stored s;
    const auto rank = r.uint<std::uint8_t>();
    for (std::uint8_t k = 0; k < rank; ++k) s.shape.push_back(static_cast<std::int64_t>(r.uint<std::uint64_t>()));
    const std::int64_t n = numel(s.shape);
    s.values.resize(static_cast<std::size_t>(n));
    for (auto& v : s.values) v = r.f64();
    if (!stored.emplace(name, std::move(s)).second) {
      throw Error(Errc::MissingParameter, "parameter " + name + " appears twice in the checkpoint");
    }
    order.push_back(std::move(name));
  }
  if (r.uint<std::uint8_t>() != 0) {
    for (const auto& name : order) {
      auto& s = stored[name];
      s.momentum.resize(s.values.size());
      for (auto& v : s.momentum) v = r.f64();
    }
  }
  if (!r.done()) throw Error(Errc::CrcMismatch, "trailing bytes after the parameter table");
  return fill(expected ? *expected : cfg, stored, order);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const UNet& model, bool with_momentum) {
  Writer w;
  w.raw("SPK1");
  w.uint<std::uint16_t>(kCheckpointVersion);
  const std::string cfg = model_config_text(model.config());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.raw(cfg);
  const auto params = model.parameters();
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(p->name.size()));
    w.raw(p->name);
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(p->value.rank()));
    for (std::int64_t d : p->value.shape()) w.uint<std::uint64_t>(static_cast<std::uint64_t>(d));
    for (double v : p->value.data()) w.f64(v);
  }
  w.uint<std::uint8_t>(with_momentum ? 1 : 0);
  if (with_momentum) {
    for (const Parameter* p : params) {
      for (std::size_t i = 0; i < p->value.storage().size(); ++i) w.f64(i < p->momentum.size() ? p->momentum[i] : 0.0);
    }
  }
  w.uint<std::uint32_t>(crc_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

UNet decode_checkpoint(const std::vector<std::uint8_t>& bytes) { return decode(bytes, nullptr); }

UNet decode_checkpoint(const std::vector<std::uint8_t>& bytes, const ModelConfig& expected) {
  return decode(bytes, &expected);
}

void save_checkpoint(const std::filesystem::path& path, const UNet& model, bool with_momentum) {
  const auto bytes = encode_checkpoint(model, with_momentum);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  const std::string s = read_file(path);
  return {s.begin(), s.end()};
}

}  // namespace

UNet load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_bytes(path)); }

UNet load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  return decode_checkpoint(read_bytes(path), expected);
}

}  // namespace stairpool
