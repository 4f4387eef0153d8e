#pragma once

#include <filesystem>
#include <string>

namespace lyapem {

// Writes content atomically: a temp file in the target directory, then a
// rename over the final path, so readers never observe a partial file.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_text(const std::filesystem::path& path);

}  // namespace lyapem
