#include "hamburger/hamburger_model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "hamburger/error.hpp"

namespace hamburger {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

HamburgerModel::HamburgerModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), params_(std::make_unique<nn::ParameterSet>()) {
  config_.validate();
  std::mt19937_64 rng(seed);
  base_ = std::make_unique<BaseModel>(*params_, config_, rng);
  embedder_ = std::make_unique<CompositionalEmbedder>(*params_, config_, rng);
  decoder_ = std::make_unique<MicroStepDecoder>(*params_, config_, rng);
}

void HamburgerModel::copy_parameters_from(const HamburgerModel& other) {
  for (const auto& p : params_->items()) {
    const nn::Parameter* src = other.parameters().find(p->name());
    if (!src) continue;
    if (!src->value().same_shape(p->value())) {
      fail(ErrorKind::dimension, "parameter '" + p->name() + "' shape " +
                                     src->value().shape_string() + " vs " +
                                     p->value().shape_string());
    }
    p->mutable_value() = src->value();
  }
}

std::string serialize_checkpoint(const HamburgerModel& model) {
  std::string out = "hamburger-checkpoint 1\n";
  const std::string config = to_json_string(model.config());
  out += "config " + std::to_string(config.size()) + "\n" + config + "\n";
  for (const auto& p : model.parameters().items()) {
    const Tensor& v = p->value();
    out += "param " + p->name() + " " + nn::to_string(p->group()) + " " + std::to_string(v.rank());
    for (std::size_t e : v.shape()) out += " " + std::to_string(e);
    out += "\n";
    const std::size_t bytes = v.size() * sizeof(double);
    const std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, v.data().data(), bytes);
    out += "\n";
  }
  out += "end\n";
  return out;
}

namespace {

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::string line() {
    const auto end = bytes_.find('\n', pos_);
    if (end == std::string::npos) fail(ErrorKind::data, "checkpoint: truncated header");
    std::string out = bytes_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return out;
  }

  std::string take(std::size_t n) {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::data, "checkpoint: truncated payload");
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void expect_newline() {
    if (take(1) != "\n") fail(ErrorKind::data, "checkpoint: missing record terminator");
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::unique_ptr<HamburgerModel> deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.line() != "hamburger-checkpoint 1") fail(ErrorKind::data, "checkpoint: bad magic");
  std::istringstream config_header(in.line());
  std::string tag;
  std::size_t config_bytes = 0;
  if (!(config_header >> tag >> config_bytes) || tag != "config") {
    fail(ErrorKind::data, "checkpoint: missing config record");
  }
  const ModelConfig config = model_config_from_json(in.take(config_bytes));
  in.expect_newline();
  auto model = std::make_unique<HamburgerModel>(config, 0);
  std::size_t loaded = 0;
  for (;;) {
    const std::string header = in.line();
    if (header == "end") break;
    std::istringstream hs(header);
    std::string name;
    std::string group;
    std::size_t rank = 0;
    if (!(hs >> tag >> name >> group >> rank) || tag != "param") {
      fail(ErrorKind::data, "checkpoint: malformed record '" + header + "'");
    }
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) {
      if (!(hs >> e)) fail(ErrorKind::data, "checkpoint: malformed extents for '" + name + "'");
    }
    const nn::Parameter* target = model->parameters().find(name);
    if (!target) fail(ErrorKind::data, "checkpoint: unknown parameter '" + name + "'");
    if (target->value().shape() != shape) {
      fail(ErrorKind::data, "checkpoint: parameter '" + name + "' has shape " +
                                shape_string(shape) + ", model expects " +
                                target->value().shape_string());
    }
    if (nn::param_group_from_string(group) != target->group()) {
      fail(ErrorKind::data, "checkpoint: parameter '" + name + "' group mismatch");
    }
    Tensor& dst = target->mutable_value();
    const std::string payload = in.take(dst.size() * sizeof(double));
    std::memcpy(dst.data().data(), payload.data(), payload.size());
    in.expect_newline();
    ++loaded;
  }
  if (!in.at_end()) fail(ErrorKind::data, "checkpoint: trailing bytes after end record");
  if (loaded != model->parameters().size()) {
    fail(ErrorKind::data, "checkpoint: " + std::to_string(loaded) + " of " +
                              std::to_string(model->parameters().size()) + " parameters present");
  }
  return model;
}

void save_checkpoint(const HamburgerModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write checkpoint '" + path + "'");
  const std::string bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "failed writing checkpoint '" + path + "'");
}

std::unique_ptr<HamburgerModel> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace hamburger
