#include "dloo/tokenizer.hpp"

#include <cctype>

namespace dloo {

namespace {
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
}  // namespace

std::int64_t count_tokens(std::string_view text) {
  std::int64_t n = 0;
  bool in_token = false;
  for (char c : text) {
    if (is_space(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++n;
    }
  }
  return n;
}

std::size_t token_offset(std::string_view text, std::int64_t k) {
  std::int64_t seen = 0;
  bool in_token = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (is_space(text[i])) {
      in_token = false;
    } else if (!in_token) {
      if (seen == k) return i;
      in_token = true;
      ++seen;
    }
  }
  return text.size();
}

}  // namespace dloo
