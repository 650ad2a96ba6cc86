#include "ctxgan/bundle_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ctxgan/errors.hpp"

namespace ctxgan {
namespace {

constexpr char kMagic[4] = {'C', 'G', 'A', 'N'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> bytes(std::size_t n, const std::string& field) {
    if (in_.size() - pos_ < n) {
      throw FormatError("weights: truncated file while reading " + field);
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U uint(const std::string& field) {
    auto b = bytes(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_archive(const WeightArchive& archive) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.uint<std::uint16_t>(kWeightFormatVersion);
  const std::string json = archive.descriptor.dump();
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(json.size()));
  w.bytes(json.data(), json.size());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(archive.arrays.size()));
  for (const NamedArray& a : archive.arrays) {
    if (a.data.size() != shape_size(a.shape)) {
      throw DimensionError("weights: array '" + a.name + "' data length disagrees with its shape");
    }
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.uint<std::uint8_t>(0);
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(a.shape.size()));
    for (std::size_t d : a.shape) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : a.data) w.f32(v);
  }
  return w.take();
}

WeightArchive decode_archive(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw FormatError("weights: bad magic (expected \"CGAN\")");
  }
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kWeightFormatVersion) {
    throw FormatError("weights: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kWeightFormatVersion) + ")");
  }
  WeightArchive archive;
  const auto json_len = r.uint<std::uint32_t>("descriptor length");
  const auto json_bytes = r.bytes(json_len, "descriptor");
  try {
    archive.descriptor = nlohmann::json::parse(json_bytes.begin(), json_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("weights: descriptor is not valid JSON: ") + e.what());
  }
  const auto count = r.uint<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "array " + std::to_string(i);
    NamedArray a;
    const auto name_len = r.uint<std::uint16_t>(where + " name length");
    const auto name = r.bytes(name_len, where + " name");
    a.name.assign(name.begin(), name.end());
    const std::string label = where + " ('" + a.name + "')";
    const auto dtype = r.uint<std::uint8_t>(label + " dtype");
    if (dtype != 0) throw FormatError("weights: " + label + " has unknown dtype " + std::to_string(dtype));
    const auto rank = r.uint<std::uint8_t>(label + " rank");
    for (std::uint8_t d = 0; d < rank; ++d) a.shape.push_back(r.uint<std::uint32_t>(label + " dims"));
    const std::size_t n = shape_size(a.shape);
    const auto raw = r.bytes(n * 4, label + " data");
    a.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t u = 0;
      for (std::size_t b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(raw[4 * k + b]) << (8 * b);
      a.data[k] = std::bit_cast<float>(u);
    }
    archive.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw FormatError("weights: trailing bytes after the last array");
  return archive;
}

void write_archive(const std::filesystem::path& path, const WeightArchive& archive) {
  const auto bytes = encode_archive(archive);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

WeightArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  write_archive(path, WeightArchive{bundle.descriptor(), bundle.export_arrays()});
}

ModelBundle bundle_from_archive(const WeightArchive& archive,
                                const std::optional<Architecture>& expected) {
  const auto& desc = archive.descriptor;
  if (!desc.is_object() || !desc.contains("architecture")) {
    throw FormatError("weights: descriptor lacks an 'architecture' entry");
  }
  ModelBundle b;
  try {
    b.arch = desc.at("architecture").get<Architecture>();
    b.style = desc.value("style", std::string{});
    if (desc.contains("metadata")) b.metadata = desc.at("metadata").get<TrainingMetadata>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("weights: malformed descriptor: ") + e.what());
  }
  if (expected && !(*expected == b.arch)) {
    throw FormatError("weights: descriptor mismatch: file holds a " + b.arch.resolution() +
                      " model (latent " + std::to_string(b.arch.latent_dim) + ", channels " +
                      std::to_string(b.arch.max_channels) + ") but " + expected->resolution() +
                      " (latent " + std::to_string(expected->latent_dim) + ", channels " +
                      std::to_string(expected->max_channels) + ") is required");
  }
  try {
    b.arch.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("weights: invalid architecture in descriptor: ") + e.what());
  }
  b.generator = Generator<float>(b.arch);
  b.discriminator = Discriminator<float>(b.arch);
  b.generator.import_arrays(archive.arrays);
  b.discriminator.import_arrays(archive.arrays);
  return b;
}

ModelBundle load_bundle(const std::filesystem::path& path, const std::optional<Architecture>& expected) {
  return bundle_from_archive(read_archive(path), expected);
}

}  // namespace ctxgan
