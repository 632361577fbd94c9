#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "residseg/unet.hpp"

namespace residseg {

inline constexpr char kCheckpointMagic[8] = {'R', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// The binary parameter file as bytes.
std::string serialize_checkpoint(const UNet<float>& model);

/// Writes the binary parameter file and a `<path>.cfg` sidecar holding the
/// network config and its fingerprint.
void save_checkpoint(const UNet<float>& model, const std::filesystem::path& path);

/// Builds a model from the sidecar config and loads the parameters into it.
UNet<float> load_checkpoint(const std::filesystem::path& path);

/// Loads into an existing model. Parameter names are compared first, then
/// shapes, then the sidecar fingerprint against the model's config.
void load_checkpoint_into(UNet<float>& model, const std::filesystem::path& path);

/// Config recorded in a checkpoint's sidecar.
UNetConfig read_checkpoint_config(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

/// FNV-1a over a file's bytes.
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace residseg
