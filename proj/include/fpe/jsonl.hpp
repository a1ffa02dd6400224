#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "fpe/common.hpp"

namespace fpe::jsonl {

// Records are dumped with sorted keys (nlohmann's default object ordering), one per
// line, so identical values always produce identical bytes.
void write(const std::filesystem::path& path, const std::vector<Json>& records);
void append(const std::filesystem::path& path, const Json& record);
std::vector<Json> read(const std::filesystem::path& path);
void for_each(const std::filesystem::path& path, const std::function<void(const Json&)>& fn);

// Write-then-rename so readers never observe a half-written artifact.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace fpe::jsonl
