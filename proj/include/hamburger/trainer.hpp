#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hamburger/corpus.hpp"
#include "hamburger/hamburger_model.hpp"
#include "hamburger/segmenter.hpp"

namespace hamburger {

struct TrainingExample {
  std::vector<std::int32_t> prompt_ids;
  // Concatenation equals the response ids; the last segment ends in EOS.
  std::vector<std::vector<std::int32_t>> segments;

  static TrainingExample from_segmentation(std::vector<std::int32_t> prompt_ids,
                                           std::span<const std::int32_t> response_ids,
                                           const Segmentation& segmentation);
  std::size_t response_length() const;
  // Throws a data error if a segment is empty or longer than max_steps.
  void validate(int max_steps) const;
};

enum class StopLabel : std::uint8_t { go_on = 0, stop = 1, masked = 2 };

// Labels for the max_steps rolled-out positions predicting a segment of
// length L: positions 1..L-1 continue, L stops, the rest are masked.
std::vector<StopLabel> stop_labels(std::size_t segment_length, int max_steps);

struct LossBreakdown {
  double lm_loss = 0.0;
  double stop_loss = 0.0;
  double total = 0.0;
  std::size_t lm_tokens = 0;
  std::size_t stop_tokens = 0;
  // Rows fed through the base model (prompt plus fused segments).
  std::size_t base_positions = 0;
};

// Differentiable sums behind a LossBreakdown.
struct TeacherForcedLoss {
  nn::Var lm_sum;
  nn::Var stop_sum;  // undefined in stop-token mode
  std::size_t lm_tokens = 0;
  std::size_t stop_tokens = 0;
  std::size_t base_positions = 0;
};

TeacherForcedLoss teacher_forced_loss(const HamburgerModel& model, const TrainingExample& example);

LossBreakdown forward_teacher_forced(const HamburgerModel& model, const TrainingExample& example,
                                     double stop_weight = 1.0);

// Next-token loss of the base model alone on the same data.
double plain_sft_loss(const BaseModel& model, const TrainingExample& example);

struct TokenAccuracy {
  double overall = 0.0;
  std::optional<double> beyond_first;  // absent when no micro position >= 2 exists
  std::size_t tokens = 0;
  std::size_t beyond_first_tokens = 0;
};

// Greedy argmax against targets under teacher forcing.
TokenAccuracy eval_token_accuracy(const HamburgerModel& model,
                                  std::span<const TrainingExample> eval_set);

struct OptimizerConfig {
  double lr_base = 1e-3;
  double lr_grafted = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double min_lr_ratio = 0.1;
  std::size_t warmup_steps = 0;
  double grad_clip = 1.0;  // global norm; 0 disables
};

// Decoupled-weight-decay Adam with one learning rate per parameter group
// and a cosine schedule decaying to min_lr_ratio of the initial rate.
class AdamW {
 public:
  AdamW(const nn::ParameterSet& params, const OptimizerConfig& config, std::size_t total_steps,
        bool update_grafted = true);

  double learning_rate(nn::ParamGroup group, std::size_t step) const;

  struct StepStats {
    double grad_norm = 0.0;
    double lr_base = 0.0;
    double lr_grafted = 0.0;
  };

  // Applies one update from the gradients currently held by the parameters.
  StepStats step();
  std::size_t steps_taken() const noexcept { return step_; }

  const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  const nn::ParameterSet* params_;
  OptimizerConfig config_;
  std::size_t total_steps_;
  bool update_grafted_;
  std::size_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

struct StepMetrics {
  std::string phase;
  std::size_t step = 0;
  double lm_loss = 0.0;
  double stop_loss = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  double lr_base = 0.0;
  double lr_grafted = 0.0;
};

// Forward + backward over the batch, then one optimizer update.
// A non-finite loss raises a numeric error naming the batch.
StepMetrics train_step(const HamburgerModel& model, std::span<const TrainingExample> batch,
                       AdamW& optimizer, double stop_weight);

struct CorpusSpec {
  std::string path;  // line-delimited corpus; takes precedence over recipe
  std::string recipe = "pattern";
  std::uint64_t seed = 0;
  std::size_t size = 2000;

  Corpus load() const;
};

struct TrainConfig {
  CorpusSpec corpus;
  CorpusSpec eval_corpus{"", "pattern", 1000003, 100};
  ModelConfig model;
  SegmenterConfig segmenter;
  double stop_weight = 1.0;  // lambda
  std::size_t batch_size = 32;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  // Plain next-token passes over the corpus before segmentation; skipped
  // when `init_checkpoint` supplies a trained base.
  std::size_t pretrain_epochs = 1;
  std::size_t epochs = 1;
  // Caps on optimizer steps per phase; 0 means as many as the epochs need.
  std::size_t pretrain_max_steps = 0;
  std::size_t max_steps = 0;
  std::string init_checkpoint;

  void validate() const;
};

TrainConfig train_config_from_json(const std::string& text);
SegmenterConfig segmenter_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string to_json_string(const TrainConfig& config);

struct TrainResult {
  std::unique_ptr<HamburgerModel> model;
  std::vector<StepMetrics> metrics;
  SegmentedCorpus segmented;
  double tau = 0.0;
};

using MetricsSink = std::function<void(const StepMetrics&)>;

// Pretrain (plain SFT) -> entropy segmentation -> fused training.
TrainResult run_training(const TrainConfig& config, const MetricsSink& sink = {});

// Single-phase loop shared by both phases.
std::vector<StepMetrics> train_epochs(const HamburgerModel& model,
                                      std::span<const TrainingExample> examples,
                                      const TrainConfig& config, const std::string& phase,
                                      std::size_t epochs, std::size_t max_steps,
                                      bool update_grafted, double stop_weight,
                                      const MetricsSink& sink);

std::string metrics_to_json(const StepMetrics& metrics);

std::vector<TrainingExample> to_training_examples(const SegmentedCorpus& corpus);
std::vector<TrainingExample> to_singleton_examples(const Corpus& corpus);

}  // namespace hamburger
