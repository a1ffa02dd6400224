#include "fpe/common.hpp"

#include <array>
#include <charconv>

namespace fpe {

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::MRI: return "MRI";
    case Modality::CT: return "CT";
    case Modality::Endoscopy: return "endoscopy";
    case Modality::Fundus: return "fundus";
    case Modality::Histopathology: return "histopathology";
  }
  return "?";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Pool: return "pool";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

std::string_view to_string(Task t) {
  return t == Task::Perception ? "perception" : "description";
}

std::string_view to_string(QuestionType q) {
  switch (q) {
    case QuestionType::YesNo: return "yes_no";
    case QuestionType::What: return "what";
    case QuestionType::How: return "how";
    case QuestionType::OpenDescription: return "open_description";
  }
  return "?";
}

Modality parse_modality(std::string_view s) {
  for (Modality m : kAllModalities) {
    if (to_string(m) == s) return m;
  }
  throw ValidationError("unknown modality '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  for (Split sp : {Split::Pool, Split::Dev, Split::Test}) {
    if (to_string(sp) == s) return sp;
  }
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::array<char, 17> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + 16, v, 16);
  std::string s(buf.data(), ptr);
  return std::string(16 - s.size(), '0') + s;
}

std::uint64_t parse_hex64(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ValidationError("bad hex64 '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace fpe
