#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "ltcl/models.hpp"

namespace ltcl {

// Byte layout: see docs/checkpoint_format.md.
inline constexpr char kCheckpointMagic[8] = {'L', 'T', 'C', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Model& model);
Model read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace ltcl
