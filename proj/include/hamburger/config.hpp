#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hamburger {

enum class EmbedderKind { cross_attention, softmax_merge };
enum class StopMode { head, token };

const char* to_string(EmbedderKind kind) noexcept;
const char* to_string(StopMode mode) noexcept;

// Architectural description shared by every component.
struct ModelConfig {
  int vocab_size = 260;
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 4;
  int decoder_layers = 2;
  // 1-based base layer indices feeding the micro-step decoder; sorted, ends at n_layers.
  std::vector<int> tap_layers{2, 4};
  int max_steps = 4;
  int ffn_mult = 4;
  // Largest admissible absolute position id plus one.
  int max_context = 4096;
  double rope_base = 10000.0;
  EmbedderKind embedder = EmbedderKind::cross_attention;
  StopMode stop_mode = StopMode::head;

  int head_dim() const noexcept { return d_model / n_heads; }
  int ffn_dim() const noexcept { return d_model * ffn_mult; }

  // Throws a configuration error naming the first offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

std::string to_json_string(const ModelConfig& config);
ModelConfig model_config_from_json(std::string_view text);

}  // namespace hamburger
