#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "glyphclass/training.hpp"

namespace glyphclass::ckpt {

inline constexpr std::uint32_t kVersion = 1;

/// Flat key = value view of a training state's configuration.
std::map<std::string, std::string> config_entries(const train::TrainState& state);

std::string serialize(const train::TrainState& state);
/// Throws Error{Format} on a bad header or inconsistent contents and
/// Error{Truncation} on a short file.
train::TrainState deserialize(std::string_view bytes);

/// Writes through a temporary file and renames, so readers never see a
/// partial checkpoint.
void save(const train::TrainState& state, const std::filesystem::path& path);
train::TrainState load(const std::filesystem::path& path);

}  // namespace glyphclass::ckpt
