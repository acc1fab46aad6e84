#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "hamburger/config.hpp"
#include "hamburger/embedder.hpp"
#include "hamburger/micro_decoder.hpp"
#include "hamburger/model.hpp"

namespace hamburger {

// Base model plus the grafted embedder, micro-step decoder and stop head,
// all registered in one parameter set.
class HamburgerModel {
 public:
  HamburgerModel(const ModelConfig& config, std::uint64_t seed);

  HamburgerModel(const HamburgerModel&) = delete;
  HamburgerModel& operator=(const HamburgerModel&) = delete;

  const ModelConfig& config() const noexcept { return config_; }
  const nn::ParameterSet& parameters() const noexcept { return *params_; }
  const BaseModel& base() const noexcept { return *base_; }
  const CompositionalEmbedder& embedder() const noexcept { return *embedder_; }
  const MicroStepDecoder& decoder() const noexcept { return *decoder_; }

  // Copies every parameter value from `other`; shapes must match by name.
  void copy_parameters_from(const HamburgerModel& other);

 private:
  ModelConfig config_;
  std::unique_ptr<nn::ParameterSet> params_;
  std::unique_ptr<BaseModel> base_;
  std::unique_ptr<CompositionalEmbedder> embedder_;
  std::unique_ptr<MicroStepDecoder> decoder_;
};

// Checkpoint layout (all integers ASCII, values little-endian binary64):
//   "hamburger-checkpoint 1\n"
//   "config <bytes>\n" <config json> "\n"
//   per parameter: "param <name> <group> <rank> <extents...>\n" <values> "\n"
//   "end\n"
void save_checkpoint(const HamburgerModel& model, const std::string& path);
std::unique_ptr<HamburgerModel> load_checkpoint(const std::string& path);

std::string serialize_checkpoint(const HamburgerModel& model);
std::unique_ptr<HamburgerModel> deserialize_checkpoint(const std::string& bytes);

}  // namespace hamburger
