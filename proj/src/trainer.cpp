#include "hamburger/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "hamburger/error.hpp"
#include "hamburger/ops.hpp"
#include "hamburger/tokenizer.hpp"
#include "json.hpp"

namespace hamburger {

using nn::Var;

TrainingExample TrainingExample::from_segmentation(std::vector<std::int32_t> prompt_ids,
                                                   std::span<const std::int32_t> response_ids,
                                                   const Segmentation& segmentation) {
  TrainingExample ex;
  ex.prompt_ids = std::move(prompt_ids);
  for (const Segment& s : segmentation) {
    if (s.start + s.length > response_ids.size()) {
      fail(ErrorKind::data, "training example: segment exceeds the response");
    }
    ex.segments.emplace_back(response_ids.begin() + static_cast<std::ptrdiff_t>(s.start),
                             response_ids.begin() + static_cast<std::ptrdiff_t>(s.start + s.length));
  }
  return ex;
}

std::size_t TrainingExample::response_length() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.size();
  return n;
}

void TrainingExample::validate(int max_steps) const {
  if (prompt_ids.empty()) fail(ErrorKind::data, "training example: empty prompt");
  if (segments.empty()) fail(ErrorKind::data, "training example: empty response");
  for (std::size_t g = 0; g < segments.size(); ++g) {
    if (segments[g].empty()) fail(ErrorKind::data, "training example: segment " + std::to_string(g) + " is empty");
    if (segments[g].size() > static_cast<std::size_t>(max_steps)) {
      fail(ErrorKind::data, "training example: segment " + std::to_string(g) + " has length " +
                                std::to_string(segments[g].size()) + " > max_steps " +
                                std::to_string(max_steps));
    }
  }
}

std::vector<StopLabel> stop_labels(std::size_t segment_length, int max_steps) {
  if (segment_length == 0 || segment_length > static_cast<std::size_t>(max_steps)) {
    fail(ErrorKind::data, "stop_labels: segment length " + std::to_string(segment_length) +
                              " outside [1, " + std::to_string(max_steps) + "]");
  }
  std::vector<StopLabel> labels(static_cast<std::size_t>(max_steps), StopLabel::masked);
  for (std::size_t i = 0; i + 1 < segment_length; ++i) labels[i] = StopLabel::go_on;
  labels[segment_length - 1] = StopLabel::stop;
  return labels;
}

namespace {

// Everything the loss and accuracy paths need from one teacher-forced pass.
struct TeacherForcedPass {
  Var logits;                         // base rows first, then decoder rows
  std::vector<std::int32_t> targets;  // one per logits row
  std::vector<std::uint8_t> first;    // 1 for micro position 1
  Var stop_logits;                    // head mode only
  std::vector<std::uint8_t> stop_targets;
  std::size_t base_positions = 0;
};

TeacherForcedPass teacher_forced_pass(const HamburgerModel& model, const TrainingExample& ex) {
  const ModelConfig& cfg = model.config();
  ex.validate(cfg.max_steps);
  const BaseModel& base = model.base();
  const bool token_stop = cfg.stop_mode == StopMode::token;
  const auto max_steps = static_cast<std::size_t>(cfg.max_steps);
  const std::size_t n = ex.prompt_ids.size();
  const std::size_t groups = ex.segments.size();

  // Base input: prompt tokens, then one fused row per segment but the last.
  std::vector<Var> rows{base.embed_rows(ex.prompt_ids)};
  std::vector<std::int64_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::int64_t{0});
  std::vector<Var> segment_embeddings;
  segment_embeddings.reserve(groups);
  for (const auto& seg : ex.segments) segment_embeddings.push_back(base.embed_rows(seg));
  for (std::size_t g = 0; g + 1 < groups; ++g) {
    rows.push_back(model.embedder().merge(segment_embeddings[g]));
    positions.push_back(assign_position(positions.back(), static_cast<std::int64_t>(ex.segments[g].size())));
  }
  const Var inputs = rows.size() == 1 ? rows.front() : nn::concat_rows(rows);
  const SequenceOutput out = base.forward(inputs, positions);

  TeacherForcedPass pass;
  pass.base_positions = positions.size();
  // Row n-1+g predicts segment g.
  const Var macro = nn::slice_rows(out.hidden, n - 1, groups);
  for (const auto& seg : ex.segments) {
    pass.targets.push_back(seg.front());
    pass.first.push_back(1);
    if (!token_stop) pass.stop_targets.push_back(seg.size() == 1 ? 1 : 0);
  }

  std::vector<Rollout> rollouts;
  std::vector<std::int32_t> micro_targets;
  std::vector<std::uint8_t> micro_stops;
  std::vector<Var> projected;
  for (std::size_t g = 0; g < groups; ++g) {
    const auto& seg = ex.segments[g];
    const std::size_t prior = token_stop ? std::min(seg.size(), max_steps - 1) : seg.size() - 1;
    if (prior == 0) continue;
    if (projected.empty()) projected = model.decoder().project_taps(out.taps);
    Rollout r;
    r.context = model.decoder().context_at(projected, n - 1 + g).rows;
    r.prior = nn::slice_rows(segment_embeddings[g], 0, prior);
    rollouts.push_back(std::move(r));
    for (std::size_t j = 1; j <= prior; ++j) {
      micro_targets.push_back(j < seg.size() ? seg[j] : tokens::stop);
      micro_stops.push_back(j + 1 == seg.size() ? 1 : 0);
    }
  }

  Var hidden = macro;
  if (!rollouts.empty()) {
    const std::vector<Var> both{macro, model.decoder().decode_rollouts(rollouts)};
    hidden = nn::concat_rows(both);
    pass.targets.insert(pass.targets.end(), micro_targets.begin(), micro_targets.end());
    pass.first.insert(pass.first.end(), micro_targets.size(), 0);
    if (!token_stop) pass.stop_targets.insert(pass.stop_targets.end(), micro_stops.begin(), micro_stops.end());
  }
  pass.logits = base.lm_head(hidden);
  if (!token_stop) pass.stop_logits = model.decoder().stop_logits(hidden);
  return pass;
}

}  // namespace

TeacherForcedLoss teacher_forced_loss(const HamburgerModel& model, const TrainingExample& example) {
  const TeacherForcedPass pass = teacher_forced_pass(model, example);
  TeacherForcedLoss loss;
  loss.base_positions = pass.base_positions;
  const std::vector<std::uint8_t> all(pass.targets.size(), 1);
  const auto lm = nn::cross_entropy(pass.logits, pass.targets, all, nn::Reduction::sum);
  loss.lm_sum = lm.loss;
  loss.lm_tokens = lm.count;
  if (pass.stop_logits.defined()) {
    const auto stop = nn::binary_cross_entropy(pass.stop_logits, pass.stop_targets, all, nn::Reduction::sum);
    loss.stop_sum = stop.loss;
    loss.stop_tokens = stop.count;
  }
  return loss;
}

LossBreakdown forward_teacher_forced(const HamburgerModel& model, const TrainingExample& example,
                                     double stop_weight) {
  nn::NoGradGuard guard;
  const TeacherForcedLoss loss = teacher_forced_loss(model, example);
  LossBreakdown b;
  b.lm_tokens = loss.lm_tokens;
  b.stop_tokens = loss.stop_tokens;
  b.base_positions = loss.base_positions;
  b.lm_loss = loss.lm_sum.value()[0] / static_cast<double>(loss.lm_tokens);
  if (loss.stop_tokens > 0) b.stop_loss = loss.stop_sum.value()[0] / static_cast<double>(loss.stop_tokens);
  b.total = b.lm_loss + stop_weight * b.stop_loss;
  return b;
}

double plain_sft_loss(const BaseModel& model, const TrainingExample& example) {
  nn::NoGradGuard guard;
  std::vector<std::int32_t> stream = example.prompt_ids;
  std::vector<std::int32_t> targets;
  for (const auto& seg : example.segments) targets.insert(targets.end(), seg.begin(), seg.end());
  stream.insert(stream.end(), targets.begin(), targets.end() - 1);
  std::vector<std::int64_t> positions(stream.size());
  std::iota(positions.begin(), positions.end(), std::int64_t{0});
  const SequenceOutput out = model.forward(model.embed_rows(stream), positions);
  const Var logits = model.lm_head(nn::slice_rows(out.hidden, example.prompt_ids.size() - 1, targets.size()));
  const std::vector<std::uint8_t> all(targets.size(), 1);
  return nn::cross_entropy(logits, targets, all).loss.value()[0];
}

TokenAccuracy eval_token_accuracy(const HamburgerModel& model, std::span<const TrainingExample> eval_set) {
  nn::NoGradGuard guard;
  TokenAccuracy acc;
  std::size_t correct = 0;
  std::size_t correct_beyond = 0;
  for (const auto& ex : eval_set) {
    const TeacherForcedPass pass = teacher_forced_pass(model, ex);
    for (std::size_t r = 0; r < pass.targets.size(); ++r) {
      // Stop-token targets are control decisions, not response tokens.
      if (!pass.first[r] && pass.targets[r] == tokens::stop) continue;
      const bool hit = static_cast<std::int32_t>(nn::argmax(pass.logits.value().row(r))) == pass.targets[r];
      ++acc.tokens;
      correct += hit ? 1 : 0;
      if (!pass.first[r]) {
        ++acc.beyond_first_tokens;
        correct_beyond += hit ? 1 : 0;
      }
    }
  }
  if (acc.tokens > 0) acc.overall = static_cast<double>(correct) / static_cast<double>(acc.tokens);
  if (acc.beyond_first_tokens > 0) {
    acc.beyond_first = static_cast<double>(correct_beyond) / static_cast<double>(acc.beyond_first_tokens);
  }
  return acc;
}

AdamW::AdamW(const nn::ParameterSet& params, const OptimizerConfig& config, std::size_t total_steps,
             bool update_grafted)
    : params_(&params), config_(config), total_steps_(total_steps), update_grafted_(update_grafted) {
  if (total_steps == 0) fail(ErrorKind::configuration, "optimizer: total_steps must be >= 1");
  for (const auto& p : params.items()) {
    m_.emplace_back(p->value().shape(), 0.0);
    v_.emplace_back(p->value().shape(), 0.0);
  }
}

double AdamW::learning_rate(nn::ParamGroup group, std::size_t step) const {
  const double peak = group == nn::ParamGroup::base ? config_.lr_base : config_.lr_grafted;
  if (step < config_.warmup_steps) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(config_.warmup_steps);
  }
  const std::size_t span = total_steps_ > config_.warmup_steps + 1 ? total_steps_ - 1 - config_.warmup_steps : 0;
  const double progress =
      span == 0 ? 1.0 : std::min(1.0, static_cast<double>(step - config_.warmup_steps) / static_cast<double>(span));
  const double floor = config_.min_lr_ratio * peak;
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::StepStats AdamW::step() {
  const auto& items = params_->items();
  auto active = [&](const nn::Parameter& p) {
    return p.learnable() && (update_grafted_ || p.group() == nn::ParamGroup::base);
  };
  double sq = 0.0;
  for (const auto& p : items) {
    if (!active(*p)) continue;
    for (double g : p->var().grad().data()) sq += g * g;
  }
  StepStats stats;
  stats.grad_norm = std::sqrt(sq);
  if (!std::isfinite(stats.grad_norm)) fail(ErrorKind::numeric, "optimizer: non-finite gradient norm");
  const double clip = (config_.grad_clip > 0.0 && stats.grad_norm > config_.grad_clip)
                          ? config_.grad_clip / stats.grad_norm
                          : 1.0;
  stats.lr_base = learning_rate(nn::ParamGroup::base, step_);
  stats.lr_grafted = update_grafted_ ? learning_rate(nn::ParamGroup::grafted, step_) : 0.0;
  const double t = static_cast<double>(step_ + 1);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const nn::Parameter& p = *items[i];
    if (!active(p)) continue;
    const double lr = p.group() == nn::ParamGroup::base ? stats.lr_base : stats.lr_grafted;
    const double decay = p.value().rank() == 2 ? config_.weight_decay : 0.0;
    Tensor& w = p.mutable_value();
    const Tensor& grad = p.var().grad();
    const bool has_grad = grad.size() == w.size();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = has_grad ? grad[k] * clip : 0.0;
      m_[i][k] = config_.beta1 * m_[i][k] + (1.0 - config_.beta1) * g;
      v_[i][k] = config_.beta2 * v_[i][k] + (1.0 - config_.beta2) * g * g;
      const double mhat = m_[i][k] / bc1;
      const double vhat = v_[i][k] / bc2;
      w[k] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + decay * w[k]);
    }
  }
  ++step_;
  return stats;
}

StepMetrics train_step(const HamburgerModel& model, std::span<const TrainingExample> batch, AdamW& optimizer,
                       double stop_weight) {
  if (batch.empty()) fail(ErrorKind::argument, "train_step: empty batch");
  model.parameters().zero_grad();
  std::vector<TeacherForcedLoss> losses;
  losses.reserve(batch.size());
  std::size_t lm_tokens = 0;
  std::size_t stop_tokens = 0;
  double lm_sum = 0.0;
  double stop_sum = 0.0;
  // Two passes keep peak memory to one graph: count first, then backprop
  // each example with the batch-level denominators.
  for (const auto& ex : batch) {
    const auto& cfg = model.config();
    const bool token_stop = cfg.stop_mode == StopMode::token;
    for (const auto& seg : ex.segments) {
      lm_tokens += seg.size();
      if (token_stop && seg.size() < static_cast<std::size_t>(cfg.max_steps)) ++lm_tokens;
      if (!token_stop) stop_tokens += seg.size();
    }
  }
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const TeacherForcedLoss loss = teacher_forced_loss(model, batch[e]);
    const double lm = loss.lm_sum.value()[0];
    const double stop = loss.stop_sum.defined() ? loss.stop_sum.value()[0] : 0.0;
    if (!std::isfinite(lm) || !std::isfinite(stop)) {
      fail(ErrorKind::numeric, "train_step: non-finite loss at batch example " + std::to_string(e) +
                                   " (step " + std::to_string(optimizer.steps_taken()) + ")");
    }
    lm_sum += lm;
    stop_sum += stop;
    Var objective = nn::scale(loss.lm_sum, 1.0 / static_cast<double>(lm_tokens));
    if (stop_weight != 0.0 && loss.stop_sum.defined()) {
      objective = nn::add(objective, nn::scale(loss.stop_sum, stop_weight / static_cast<double>(stop_tokens)));
    }
    if (objective.requires_grad()) objective.backward();
  }
  const AdamW::StepStats stats = optimizer.step();
  StepMetrics m;
  m.step = optimizer.steps_taken();
  m.lm_loss = lm_sum / static_cast<double>(lm_tokens);
  m.stop_loss = stop_tokens > 0 ? stop_sum / static_cast<double>(stop_tokens) : 0.0;
  m.total = m.lm_loss + stop_weight * m.stop_loss;
  m.grad_norm = stats.grad_norm;
  m.lr_base = stats.lr_base;
  m.lr_grafted = stats.lr_grafted;
  return m;
}

Corpus CorpusSpec::load() const {
  if (!path.empty()) return read_corpus(path);
  return synth_corpus(recipe, seed, size);
}

void TrainConfig::validate() const {
  model.validate();
  segmenter.validate();
  if (batch_size == 0) fail(ErrorKind::configuration, "train config field 'batch_size': must be >= 1");
  if (!(stop_weight >= 0.0)) fail(ErrorKind::configuration, "train config field 'stop_weight': must be >= 0");
  if (!(optimizer.lr_base >= 0.0)) fail(ErrorKind::configuration, "train config field 'lr_base': must be >= 0");
  if (!(optimizer.lr_grafted >= 0.0)) fail(ErrorKind::configuration, "train config field 'lr_grafted': must be >= 0");
  if (!(optimizer.min_lr_ratio >= 0.0 && optimizer.min_lr_ratio <= 1.0)) {
    fail(ErrorKind::configuration, "train config field 'min_lr_ratio': must lie in [0, 1]");
  }
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) fail(ErrorKind::configuration, "train config field 'beta1': must lie in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) fail(ErrorKind::configuration, "train config field 'beta2': must lie in [0, 1)");
  if (epochs == 0 && max_steps == 0) fail(ErrorKind::configuration, "train config field 'epochs': must be >= 1");
}

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// Reads the keys of `j` into fields, rejecting unknown keys with their path.
class FieldReader {
 public:
  FieldReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(ErrorKind::configuration, "train config '" + where_ + "': expected an object");
  }

  template <typename T>
  void get(const char* key, T& field) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    try {
      j_.at(key).get_to(field);
    } catch (const json::exception&) {
      fail(ErrorKind::configuration, "train config field '" + path(key) + "': bad type");
    }
  }

  const json* child(const char* key) {
    seen_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        fail(ErrorKind::configuration, "train config: unknown field '" + path(it.key()) + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

void read_corpus_spec(const json& j, const std::string& where, CorpusSpec& spec) {
  FieldReader r(j, where);
  r.get("path", spec.path);
  r.get("recipe", spec.recipe);
  r.get("seed", spec.seed);
  r.get("size", spec.size);
  r.finish();
}

void read_segmenter(const json& j, const std::string& where, SegmenterConfig& c) {
  FieldReader s(j, where);
  s.get("tau", c.tau);
  s.get("rho", c.rho);
  s.get("percentile", c.percentile);
  s.finish();
}

json parse_config(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::configuration, std::string("train config: ") + e.what());
  }
}

ojson corpus_spec_json(const CorpusSpec& spec) {
  ojson j;
  j["path"] = spec.path;
  j["recipe"] = spec.recipe;
  j["seed"] = spec.seed;
  j["size"] = spec.size;
  return j;
}

}  // namespace

SegmenterConfig segmenter_config_from_json(const std::string& text) {
  SegmenterConfig c;
  read_segmenter(parse_config(text), "segmenter", c);
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const std::string& text) {
  const json j = parse_config(text);
  TrainConfig c;
  FieldReader r(j, "");
  if (const json* v = r.child("corpus")) read_corpus_spec(*v, "corpus", c.corpus);
  if (const json* v = r.child("eval_corpus")) read_corpus_spec(*v, "eval_corpus", c.eval_corpus);
  if (const json* v = r.child("model")) c.model = model_config_from_json(v->dump());
  if (const json* v = r.child("segmenter")) read_segmenter(*v, "segmenter", c.segmenter);
  if (const json* v = r.child("optimizer")) {
    FieldReader o(*v, "optimizer");
    o.get("lr_base", c.optimizer.lr_base);
    o.get("lr_grafted", c.optimizer.lr_grafted);
    o.get("beta1", c.optimizer.beta1);
    o.get("beta2", c.optimizer.beta2);
    o.get("eps", c.optimizer.eps);
    o.get("weight_decay", c.optimizer.weight_decay);
    o.get("min_lr_ratio", c.optimizer.min_lr_ratio);
    o.get("warmup_steps", c.optimizer.warmup_steps);
    o.get("grad_clip", c.optimizer.grad_clip);
    o.finish();
  }
  r.get("stop_weight", c.stop_weight);
  r.get("batch_size", c.batch_size);
  r.get("seed", c.seed);
  r.get("pretrain_epochs", c.pretrain_epochs);
  r.get("epochs", c.epochs);
  r.get("pretrain_max_steps", c.pretrain_max_steps);
  r.get("max_steps", c.max_steps);
  r.get("init_checkpoint", c.init_checkpoint);
  r.finish();
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return train_config_from_json(ss.str());
}

std::string to_json_string(const TrainConfig& c) {
  ojson j;
  j["corpus"] = corpus_spec_json(c.corpus);
  j["eval_corpus"] = corpus_spec_json(c.eval_corpus);
  j["model"] = ojson::parse(to_json_string(c.model));
  j["segmenter"] = {{"tau", c.segmenter.tau}, {"rho", c.segmenter.rho}, {"percentile", c.segmenter.percentile}};
  ojson o;
  o["lr_base"] = c.optimizer.lr_base;
  o["lr_grafted"] = c.optimizer.lr_grafted;
  o["beta1"] = c.optimizer.beta1;
  o["beta2"] = c.optimizer.beta2;
  o["eps"] = c.optimizer.eps;
  o["weight_decay"] = c.optimizer.weight_decay;
  o["min_lr_ratio"] = c.optimizer.min_lr_ratio;
  o["warmup_steps"] = c.optimizer.warmup_steps;
  o["grad_clip"] = c.optimizer.grad_clip;
  j["optimizer"] = o;
  j["stop_weight"] = c.stop_weight;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["epochs"] = c.epochs;
  j["pretrain_max_steps"] = c.pretrain_max_steps;
  j["max_steps"] = c.max_steps;
  j["init_checkpoint"] = c.init_checkpoint;
  return j.dump(2);
}

std::string metrics_to_json(const StepMetrics& m) {
  ojson j;
  j["phase"] = m.phase;
  j["step"] = m.step;
  j["lm_loss"] = m.lm_loss;
  j["stop_loss"] = m.stop_loss;
  j["total"] = m.total;
  j["grad_norm"] = m.grad_norm;
  j["lr_base"] = m.lr_base;
  j["lr_grafted"] = m.lr_grafted;
  return j.dump();
}

std::vector<TrainingExample> to_training_examples(const SegmentedCorpus& corpus) {
  std::vector<TrainingExample> out;
  out.reserve(corpus.examples.size());
  for (const auto& s : corpus.examples) {
    out.push_back(TrainingExample::from_segmentation(s.prompt_ids, s.response_ids, s.segmentation));
  }
  return out;
}

std::vector<TrainingExample> to_singleton_examples(const Corpus& corpus) {
  std::vector<TrainingExample> out;
  out.reserve(corpus.examples.size());
  for (const auto& ex : corpus.examples) {
    const auto response = response_ids(ex.response);
    out.push_back(TrainingExample::from_segmentation(prompt_ids(ex.prompt), response,
                                                     singleton_segmentation(response.size())));
  }
  return out;
}

std::vector<StepMetrics> train_epochs(const HamburgerModel& model, std::span<const TrainingExample> examples,
                                      const TrainConfig& config, const std::string& phase, std::size_t epochs,
                                      std::size_t max_steps, bool update_grafted, double stop_weight,
                                      const MetricsSink& sink) {
  if (examples.empty()) fail(ErrorKind::argument, "train_epochs: no examples");
  const std::size_t per_epoch = (examples.size() + config.batch_size - 1) / config.batch_size;
  std::size_t total = epochs * per_epoch;
  if (max_steps > 0) total = epochs == 0 ? max_steps : std::min(total, max_steps);
  if (total == 0) return {};
  AdamW optimizer(model.parameters(), config.optimizer, total, update_grafted);
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(config.seed),
                                   static_cast<std::uint32_t>(config.seed >> 32)};
  words.insert(words.end(), phase.begin(), phase.end());
  std::seed_seq seq(words.begin(), words.end());
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(examples.size());
  std::vector<StepMetrics> metrics;
  std::vector<TrainingExample> batch;
  while (optimizer.steps_taken() < total) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < per_epoch && optimizer.steps_taken() < total; ++b) {
      batch.clear();
      const std::size_t end = std::min(examples.size(), (b + 1) * config.batch_size);
      for (std::size_t i = b * config.batch_size; i < end; ++i) batch.push_back(examples[order[i]]);
      StepMetrics m = train_step(model, batch, optimizer, stop_weight);
      m.phase = phase;
      if (sink) sink(m);
      metrics.push_back(std::move(m));
    }
  }
  return metrics;
}

TrainResult run_training(const TrainConfig& config, const MetricsSink& sink) {
  config.validate();
  TrainResult result;
  const bool from_checkpoint = !config.init_checkpoint.empty();
  result.model = from_checkpoint ? load_checkpoint(config.init_checkpoint)
                                 : std::make_unique<HamburgerModel>(config.model, config.seed);
  const HamburgerModel& model = *result.model;
  const Corpus corpus = config.corpus.load();
  auto record = [&](const StepMetrics& m) {
    if (sink) sink(m);
  };
  if (!from_checkpoint && (config.pretrain_epochs > 0 || config.pretrain_max_steps > 0)) {
    const auto plain = to_singleton_examples(corpus);
    auto m = train_epochs(model, plain, config, "pretrain", config.pretrain_epochs, config.pretrain_max_steps,
                          false, 0.0, record);
    result.metrics.insert(result.metrics.end(), m.begin(), m.end());
  }
  result.segmented = segment_corpus(model.base(), corpus, config.segmenter, model.config().max_steps);
  result.tau = result.segmented.config.tau;
  const auto fused = to_training_examples(result.segmented);
  auto m = train_epochs(model, fused, config, "fused", config.epochs, config.max_steps, true, config.stop_weight,
                        record);
  result.metrics.insert(result.metrics.end(), m.begin(), m.end());
  return result;
}

}  // namespace hamburger
