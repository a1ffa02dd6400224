#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace fpe::options {

// Case-fold, turn punctuation into spaces, collapse runs of whitespace, trim.
std::string normalize(std::string_view text);

// "B) motion artifact" -> "motion artifact". Only strips a single letter followed by
// ')', '.' or ':' (optionally parenthesised); anything else is returned unchanged.
std::string_view strip_label(std::string_view choice);

// Resolve free-form answer text to a choice index. Choice i carries letter 'A' + i.
//   1. a leading standalone option letter ("b", "(c)", "  b) motion artifact") wins;
//   2. otherwise the normalized text must equal a normalized choice text;
//   3. otherwise the choice text occurring earliest as a whole-word run in the answer.
std::optional<std::size_t> resolve(std::string_view answer, std::span<const std::string> choices);

}  // namespace fpe::options
