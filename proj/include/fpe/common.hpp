#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace fpe {

using Json = nlohmann::json;

// Error taxonomy. The CLI maps ValidationError -> exit 1, ClientError -> exit 2;
// the service maps NotFound -> 404, Conflict -> 409, ValidationError -> 400.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ClientError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class Conflict : public Error {
 public:
  using Error::Error;
};

enum class Modality { MRI, CT, Endoscopy, Fundus, Histopathology };
enum class Split { Pool, Dev, Test };
enum class Task { Perception, Description };
enum class QuestionType { YesNo, What, How, OpenDescription };

NLOHMANN_JSON_SERIALIZE_ENUM(Modality, {
                                           {Modality::MRI, "MRI"},
                                           {Modality::CT, "CT"},
                                           {Modality::Endoscopy, "endoscopy"},
                                           {Modality::Fundus, "fundus"},
                                           {Modality::Histopathology, "histopathology"},
                                       })

NLOHMANN_JSON_SERIALIZE_ENUM(Split, {
                                        {Split::Pool, "pool"},
                                        {Split::Dev, "dev"},
                                        {Split::Test, "test"},
                                    })

NLOHMANN_JSON_SERIALIZE_ENUM(Task, {
                                       {Task::Perception, "perception"},
                                       {Task::Description, "description"},
                                   })

NLOHMANN_JSON_SERIALIZE_ENUM(QuestionType, {
                                               {QuestionType::YesNo, "yes_no"},
                                               {QuestionType::What, "what"},
                                               {QuestionType::How, "how"},
                                               {QuestionType::OpenDescription, "open_description"},
                                           })

std::string_view to_string(Modality m);
std::string_view to_string(Split s);
std::string_view to_string(Task t);
std::string_view to_string(QuestionType q);

Modality parse_modality(std::string_view s);
Split parse_split(std::string_view s);

inline constexpr Modality kAllModalities[] = {Modality::MRI, Modality::CT, Modality::Endoscopy,
                                              Modality::Fundus, Modality::Histopathology};

// Binary capability-dimension label vector c = (c_1..c_K).
using CapabilityLabels = std::vector<std::uint8_t>;

// Stable 64-bit FNV-1a, used for content addressing and counter-based streams.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(std::string_view s);

}  // namespace fpe
