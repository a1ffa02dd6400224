#include "fpe/options.hpp"

#include <cctype>

namespace fpe::options {

namespace {

bool is_label_delim(char c) { return c == ')' || c == '.' || c == ':'; }

// Returns the 0-based letter index when `text` starts with a standalone option letter.
std::optional<std::size_t> leading_letter(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  bool paren = false;
  if (i < text.size() && text[i] == '(') {
    paren = true;
    ++i;
  }
  if (i >= text.size() || !std::isalpha(static_cast<unsigned char>(text[i]))) return std::nullopt;
  const auto letter = static_cast<std::size_t>(std::tolower(static_cast<unsigned char>(text[i])) - 'a');
  ++i;
  if (i == text.size()) return paren ? std::nullopt : std::optional(letter);
  if (paren) return text[i] == ')' ? std::optional(letter) : std::nullopt;
  if (is_label_delim(text[i])) return letter;
  // Lone letter followed only by whitespace.
  std::size_t j = i;
  while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
  return j == text.size() ? std::optional(letter) : std::nullopt;
}

}  // namespace

std::string normalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      pending_space = true;
    }
  }
  return out;
}

std::string_view strip_label(std::string_view choice) {
  std::size_t i = 0;
  while (i < choice.size() && std::isspace(static_cast<unsigned char>(choice[i]))) ++i;
  std::size_t j = i;
  const bool paren = j < choice.size() && choice[j] == '(';
  if (paren) ++j;
  if (j >= choice.size() || !std::isalpha(static_cast<unsigned char>(choice[j]))) return choice;
  ++j;
  if (j >= choice.size()) return choice;
  if (paren ? choice[j] != ')' : !is_label_delim(choice[j])) return choice;
  ++j;
  while (j < choice.size() && std::isspace(static_cast<unsigned char>(choice[j]))) ++j;
  if (j >= choice.size()) return choice;
  return choice.substr(j);
}

std::optional<std::size_t> resolve(std::string_view answer, std::span<const std::string> choices) {
  if (choices.empty()) return std::nullopt;
  if (auto letter = leading_letter(answer); letter && *letter < choices.size()) return letter;

  const std::string norm = normalize(answer);
  if (norm.empty()) return std::nullopt;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (normalize(strip_label(choices[i])) == norm) return i;
  }

  const std::string padded = " " + norm + " ";
  std::optional<std::size_t> best;
  std::size_t best_pos = std::string::npos;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    const std::string c = normalize(strip_label(choices[i]));
    if (c.empty()) continue;
    const auto pos = padded.find(" " + c + " ");
    if (pos != std::string::npos && pos < best_pos) {
      best_pos = pos;
      best = i;
    }
  }
  return best;
}

}  // namespace fpe::options
