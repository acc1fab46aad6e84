#include "hamburger/tokenizer.hpp"

namespace hamburger {

std::vector<std::int32_t> encode(std::string_view text) {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size());
  for (char ch : text) ids.push_back(static_cast<std::int32_t>(static_cast<unsigned char>(ch)));
  return ids;
}

std::string decode(std::span<const std::int32_t> ids) {
  std::string out;
  out.reserve(ids.size());
  for (std::int32_t id : ids) {
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

std::vector<std::int32_t> prompt_ids(std::string_view prompt) {
  std::vector<std::int32_t> ids{tokens::bos};
  auto body = encode(prompt);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(tokens::resp);
  return ids;
}

std::vector<std::int32_t> response_ids(std::string_view response) {
  auto ids = encode(response);
  ids.push_back(tokens::eos);
  return ids;
}

}  // namespace hamburger
