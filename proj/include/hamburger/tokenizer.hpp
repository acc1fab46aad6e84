#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hamburger {

namespace tokens {
inline constexpr std::int32_t pad = 256;
inline constexpr std::int32_t bos = 257;
inline constexpr std::int32_t eos = 258;
inline constexpr std::int32_t resp = 259;
// The stop-token ablation reuses PAD as its reserved stop symbol.
inline constexpr std::int32_t stop = pad;
inline constexpr std::int32_t vocab_size = 260;
}  // namespace tokens

// Byte-level tokenizer: ids 0..255 are raw bytes, the rest are specials.
std::vector<std::int32_t> encode(std::string_view text);
// Specials are dropped; decoding only specials yields empty text.
std::string decode(std::span<const std::int32_t> ids);

// Wire layout of one example: BOS prompt RESP | response EOS.
std::vector<std::int32_t> prompt_ids(std::string_view prompt);
std::vector<std::int32_t> response_ids(std::string_view response);

}  // namespace hamburger
