#pragma once

#include <filesystem>
#include <string>

#include "dgs/model.hpp"

namespace dgs {

inline constexpr const char* kCheckpointVersion = "dgs-v1";

/// JSON document; every real is printed with 17 significant digits so a
/// load reproduces the saved doubles exactly.
std::string checkpoint_to_string(const ModelState& model);
ModelState checkpoint_from_string(const std::string& text);

void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
/// Throws VersionMismatch on a foreign version and ParseError on a bad document.
ModelState load_checkpoint(const std::filesystem::path& path);

} // namespace dgs
