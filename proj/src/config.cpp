#include "hamburger/config.hpp"

#include <algorithm>

#include "hamburger/error.hpp"
#include "json.hpp"

namespace hamburger {

namespace {

using nlohmann::json;

void check(bool ok, const std::string& field, const std::string& why) {
  if (!ok) fail(ErrorKind::configuration, "model config field '" + field + "': " + why);
}

}  // namespace

const char* to_string(EmbedderKind kind) noexcept {
  return kind == EmbedderKind::cross_attention ? "cross_attention" : "softmax_merge";
}

const char* to_string(StopMode mode) noexcept { return mode == StopMode::head ? "head" : "token"; }

void ModelConfig::validate() const {
  check(vocab_size > 0, "vocab_size", "must be positive");
  check(d_model > 0, "d_model", "must be positive");
  check(n_heads > 0, "n_heads", "must be positive");
  check(d_model % n_heads == 0, "d_model", "must be divisible by n_heads");
  check(head_dim() % 2 == 0, "n_heads", "head dimension must be even for rotary positions");
  check(n_layers > 0, "n_layers", "must be positive");
  check(decoder_layers > 0, "decoder_layers", "must be positive");
  check(!tap_layers.empty(), "tap_layers", "must not be empty");
  check(std::is_sorted(tap_layers.begin(), tap_layers.end()) &&
            std::adjacent_find(tap_layers.begin(), tap_layers.end()) == tap_layers.end(),
        "tap_layers", "must be strictly ascending");
  check(tap_layers.front() >= 1 && tap_layers.back() <= n_layers, "tap_layers",
        "must lie in [1, n_layers]");
  check(tap_layers.back() == n_layers, "tap_layers", "must include the last layer");
  check(max_steps >= 1, "max_steps", "must be at least 1");
  check(ffn_mult > 0, "ffn_mult", "must be positive");
  check(max_context > 0, "max_context", "must be positive");
  check(rope_base > 1.0, "rope_base", "must exceed 1");
}

std::string to_json_string(const ModelConfig& c) {
  json j = {
      {"vocab_size", c.vocab_size},
      {"d_model", c.d_model},
      {"n_heads", c.n_heads},
      {"n_layers", c.n_layers},
      {"decoder_layers", c.decoder_layers},
      {"tap_layers", c.tap_layers},
      {"max_steps", c.max_steps},
      {"ffn_mult", c.ffn_mult},
      {"max_context", c.max_context},
      {"rope_base", c.rope_base},
      {"embedder", to_string(c.embedder)},
      {"stop_mode", to_string(c.stop_mode)},
  };
  return j.dump();
}

ModelConfig model_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::configuration, std::string("model config: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::configuration, "model config: expected an object");
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      fail(ErrorKind::configuration, std::string("model config field '") + key + "': bad type");
    }
  };
  get("vocab_size", c.vocab_size);
  get("d_model", c.d_model);
  get("n_heads", c.n_heads);
  get("n_layers", c.n_layers);
  get("decoder_layers", c.decoder_layers);
  get("tap_layers", c.tap_layers);
  get("max_steps", c.max_steps);
  get("ffn_mult", c.ffn_mult);
  get("max_context", c.max_context);
  get("rope_base", c.rope_base);
  std::string embedder = to_string(c.embedder);
  std::string stop_mode = to_string(c.stop_mode);
  get("embedder", embedder);
  get("stop_mode", stop_mode);
  if (embedder == "cross_attention") {
    c.embedder = EmbedderKind::cross_attention;
  } else if (embedder == "softmax_merge") {
    c.embedder = EmbedderKind::softmax_merge;
  } else {
    fail(ErrorKind::configuration, "model config field 'embedder': unknown kind '" + embedder + "'");
  }
  if (stop_mode == "head") {
    c.stop_mode = StopMode::head;
  } else if (stop_mode == "token") {
    c.stop_mode = StopMode::token;
  } else {
    fail(ErrorKind::configuration, "model config field 'stop_mode': unknown mode '" + stop_mode + "'");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* known[] = {"vocab_size", "d_model",     "n_heads",   "n_layers",
                                  "decoder_layers", "tap_layers", "max_steps", "ffn_mult",
                                  "max_context", "rope_base",  "embedder",  "stop_mode"};
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return it.key() == k; }) == std::end(known)) {
      fail(ErrorKind::configuration, "model config: unknown field '" + it.key() + "'");
    }
  }
  c.validate();
  return c;
}

}  // namespace hamburger
