#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxgan/model.hpp"

namespace ctxgan {

// Weight file layout, all integers little-endian:
//   "CGAN" | u16 version | u32 len | descriptor JSON (len bytes)
//   | u32 count | count x { u16 len | name | u8 dtype (0 = f32) | u8 rank
//                          | rank x u32 dim | raw f32 data }

inline constexpr std::uint16_t kWeightFormatVersion = 1;

struct WeightArchive {
  nlohmann::json descriptor;
  std::vector<NamedArray> arrays;
};

std::vector<std::uint8_t> encode_archive(const WeightArchive& archive);
/// Throws FormatError naming the field that failed (magic, version,
/// descriptor, array count, array i name/dtype/rank/dims/data).
WeightArchive decode_archive(std::span<const std::uint8_t> bytes);

void write_archive(const std::filesystem::path& path, const WeightArchive& archive);
WeightArchive read_archive(const std::filesystem::path& path);

/// Writes atomically (temp file, then rename).
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
/// When `expected` is given, a bundle built for a different architecture
/// is rejected with a "descriptor mismatch" FormatError.
ModelBundle load_bundle(const std::filesystem::path& path,
                        const std::optional<Architecture>& expected = std::nullopt);
ModelBundle bundle_from_archive(const WeightArchive& archive,
                                const std::optional<Architecture>& expected = std::nullopt);

}  // namespace ctxgan
