#pragma once

#include "lfsd/denoiser.hpp"
#include "lfsd/icgen.hpp"
#include "lfsd/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lfsd {

// "LFSD" container layout (all integers little-endian u32):
//   magic "LFSD" | version | config length | config JSON bytes |
//   array count | per array: name length, name bytes, ndim, dims...,
//   float32 LE data in row-major order.
inline constexpr char kCheckpointMagic[4] = {'L', 'F', 'S', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  bool operator==(const NamedArray&) const = default;
};

struct Container {
  std::string config;  // JSON text; carries a "kind" field
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
  bool operator==(const Container&) const = default;
};

std::vector<std::uint8_t> encode_container(const Container& container);
// Throws FormatError on bad magic, version mismatch, or truncation.
Container decode_container(std::span<const std::uint8_t> bytes);

void write_container(const Container& container, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

Container to_container(const Denoiser& model);
Denoiser denoiser_from_container(const Container& container);

// Arrays named "ctx/<session>/<token>", shape [m, data_dim].
Container to_container(const ContextBank& bank);
ContextBank bank_from_container(const Container& container);

Container to_container(const ProbeClassifier& probe);
ProbeClassifier probe_from_container(const Container& container);

inline void save_checkpoint(const Denoiser& model, const std::filesystem::path& path) {
  write_container(to_container(model), path);
}
inline void save_checkpoint(const ContextBank& bank, const std::filesystem::path& path) {
  write_container(to_container(bank), path);
}
inline void save_checkpoint(const ProbeClassifier& probe, const std::filesystem::path& path) {
  write_container(to_container(probe), path);
}
inline Denoiser load_denoiser(const std::filesystem::path& path) {
  return denoiser_from_container(read_container(path));
}
inline ContextBank load_bank(const std::filesystem::path& path) {
  return bank_from_container(read_container(path));
}
inline ProbeClassifier load_probe(const std::filesystem::path& path) {
  return probe_from_container(read_container(path));
}

// Rounds every parameter through float32, matching what a checkpoint holds.
Denoiser round_to_checkpoint_precision(const Denoiser& model);

}  // namespace lfsd
