#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace dloo {

// Synthetic tokenizer: one token per maximal run of non-whitespace bytes.
// The scripted backend reports usage with it, which makes token accounting
// exact and independent of any real model vocabulary.
std::int64_t count_tokens(std::string_view text);

// Byte offset of the first byte of token `k` (0-based); text.size() if the
// text has k or fewer tokens.
std::size_t token_offset(std::string_view text, std::int64_t k);

}  // namespace dloo
