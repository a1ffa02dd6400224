#include "fpe/jsonl.hpp"

#include <sstream>

namespace fpe::jsonl {

void write(const std::filesystem::path& path, const std::vector<Json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  write_atomic(path, out);
}

void append(const std::filesystem::path& path, const Json& record) {
  std::ofstream f(path, std::ios::app | std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for append");
  f << record.dump() << '\n';
}

void for_each(const std::filesystem::path& path, const std::function<void(const Json&)>& fn) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFound("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    fn(j);
  }
}

std::vector<Json> read(const std::filesystem::path& path) {
  std::vector<Json> out;
  for_each(path, [&](const Json& j) { out.push_back(j); });
  return out;
}

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFound("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace fpe::jsonl
