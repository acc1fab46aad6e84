// Command-line front end. Talks to the library only through hamburger.h.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hamburger/hamburger.h"
#include "json.hpp"

namespace {

using json = nlohmann::json;

enum Exit { exit_ok = 0, exit_usage = 1, exit_invariant = 2, exit_numeric = 3 };

struct Failure {
  int code;
  std::string message;
};

int exit_code(hb_status s) {
  switch (s) {
    case HB_OK: return exit_ok;
    case HB_ERR_ARGUMENT:
    case HB_ERR_CONFIGURATION:
    case HB_ERR_DOMAIN:
    case HB_ERR_VOCABULARY: return exit_usage;
    case HB_ERR_NUMERIC: return exit_numeric;
    default: return exit_invariant;
  }
}

void check(hb_status s) {
  if (s != HB_OK) {
    throw Failure{exit_code(s), std::string(hb_status_name(s)) + ": " + hb_last_error()};
  }
}

[[noreturn]] void usage(const std::string& message) { throw Failure{exit_usage, message}; }

struct ModelDeleter {
  void operator()(hb_model* m) const { hb_model_free(m); }
};
struct CorpusDeleter {
  void operator()(hb_corpus* c) const { hb_corpus_free(c); }
};
struct GenerationDeleter {
  void operator()(hb_generation* g) const { hb_generation_free(g); }
};
using ModelPtr = std::unique_ptr<hb_model, ModelDeleter>;
using CorpusPtr = std::unique_ptr<hb_corpus, CorpusDeleter>;
using GenerationPtr = std::unique_ptr<hb_generation, GenerationDeleter>;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<double> theta;
  std::string recipe;
  std::string out;
  std::string trace;
  std::vector<std::string> variant;
  // Subcommand specifics.
  std::string model;
  std::string corpus;
  std::string prompt;
  std::string metrics;
  std::string segments;
  std::size_t size = 0;
  std::size_t max_new = 256;
  std::size_t reps = 5;
  std::size_t workload_tokens = 256;
  bool ignore_eos = false;
  double fixed_tau = -1.0;
  std::vector<double> n, big_c, small_c, alpha, c_ratio;
  std::vector<std::size_t> context;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) usage("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    usage(what + ": " + e.what());
  }
}

// Train config with --seed / --recipe applied on top of --config.
std::string train_config(const Options& o) {
  json j = o.config.empty() ? json::object() : parse_json(read_file(o.config), o.config);
  if (!j.is_object()) usage("config '" + o.config + "': expected an object");
  if (o.seed) j["seed"] = *o.seed;
  if (!o.recipe.empty()) {
    j["corpus"]["recipe"] = o.recipe;
    j["eval_corpus"]["recipe"] = o.recipe;
  }
  const std::string text = j.dump();
  char* normalized = nullptr;
  check(hb_train_config_check(text.c_str(), &normalized));
  std::string out(normalized);
  hb_string_free(normalized);
  return out;
}

std::string section(const std::string& config_json, const char* key) {
  const json j = json::parse(config_json);
  return j.contains(key) ? j.at(key).dump() : std::string();
}

// Explicit --corpus, else the config's eval corpus (--recipe / --seed / --size override it).
CorpusPtr eval_corpus(const Options& o, const std::string& config_json) {
  hb_corpus* c = nullptr;
  if (!o.corpus.empty()) {
    check(hb_corpus_load(o.corpus.c_str(), &c));
    return CorpusPtr(c);
  }
  const json spec = json::parse(config_json).at("eval_corpus");
  if (!spec.at("path").get<std::string>().empty()) {
    check(hb_corpus_load(spec.at("path").get<std::string>().c_str(), &c));
    return CorpusPtr(c);
  }
  const std::string recipe = o.recipe.empty() ? spec.at("recipe").get<std::string>() : o.recipe;
  const std::uint64_t seed = o.seed ? *o.seed : spec.at("seed").get<std::uint64_t>();
  const std::size_t size = o.size > 0 ? o.size : spec.at("size").get<std::size_t>();
  check(hb_corpus_synth(recipe.c_str(), seed, size, &c));
  return CorpusPtr(c);
}

ModelPtr load_model(const Options& o) {
  if (o.model.empty()) usage("--model is required");
  hb_model* m = nullptr;
  check(hb_model_load(o.model.c_str(), &m));
  return ModelPtr(m);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Failure{exit_invariant, "cannot write '" + path + "'"};
  out.precision(17);
  return out;
}

// CSV goes to --out when given, else stdout.
struct CsvSink {
  explicit CsvSink(const std::string& path) {
    if (!path.empty()) file = open_out(path);
    stream().precision(17);
  }
  std::ostream& stream() { return file ? static_cast<std::ostream&>(*file) : std::cout; }
  std::optional<std::ofstream> file;
};

struct MetricsWriter {
  explicit MetricsWriter(const std::string& path) {
    if (!path.empty()) file = open_out(path);
  }
  static void callback(const char* record, void* self) {
    auto* w = static_cast<MetricsWriter*>(self);
    (w->file ? static_cast<std::ostream&>(*w->file) : std::cout) << record << '\n';
  }
  std::optional<std::ofstream> file;
};

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

int run_synth(const Options& o) {
  if (o.recipe.empty()) usage("--recipe is required");
  if (o.out.empty()) usage("--out is required");
  hb_corpus* c = nullptr;
  check(hb_corpus_synth(o.recipe.c_str(), o.seed.value_or(0), o.size > 0 ? o.size : 100, &c));
  CorpusPtr corpus(c);
  check(hb_corpus_save(corpus.get(), o.out.c_str()));
  std::cout << json{{"recipe", o.recipe}, {"examples", hb_corpus_size(corpus.get())}}.dump()
            << '\n';
  return exit_ok;
}

int run_train(const Options& o) {
  if (o.out.empty()) usage("--out (checkpoint path) is required");
  const std::string config = train_config(o);
  MetricsWriter metrics(o.metrics);
  hb_model* m = nullptr;
  hb_train_summary summary{};
  check(hb_train(config.c_str(), &MetricsWriter::callback, &metrics,
                 o.segments.empty() ? nullptr : o.segments.c_str(), &m, &summary));
  ModelPtr model(m);
  check(hb_model_save(model.get(), o.out.c_str()));
  std::cerr << json{{"checkpoint", o.out},
                    {"steps", summary.steps},
                    {"tau", summary.tau},
                    {"mean_segment_length", summary.mean_segment_length}}
                   .dump()
            << '\n';
  return exit_ok;
}

int run_segment(const Options& o) {
  ModelPtr model = load_model(o);
  const std::string config = train_config(o);
  hb_corpus* c = nullptr;
  if (!o.corpus.empty()) {
    check(hb_corpus_load(o.corpus.c_str(), &c));
  } else {
    const json spec = json::parse(config).at("corpus");
    const std::size_t size = o.size > 0 ? o.size : spec.at("size").get<std::size_t>();
    check(hb_corpus_synth(spec.at("recipe").get<std::string>().c_str(),
                          spec.at("seed").get<std::uint64_t>(), size, &c));
  }
  CorpusPtr corpus(c);
  hb_segment_summary s{};
  const std::string seg = section(config, "segmenter");
  check(hb_segment(model.get(), corpus.get(), seg.c_str(), o.fixed_tau,
                   o.out.empty() ? nullptr : o.out.c_str(), &s));
  std::cout << json{{"tau", s.tau},
                    {"examples", s.examples},
                    {"tokens", s.tokens},
                    {"segments", s.segments},
                    {"mean_segment_length", s.mean_segment_length}}
                   .dump()
            << '\n';
  return exit_ok;
}

int run_generate(const Options& o) {
  ModelPtr model = load_model(o);
  if (o.theta.size() > 1) usage("generate takes a single --theta");
  hb_generate_options g = hb_generate_defaults();
  g.confidence = o.theta.empty() ? 0.0 : o.theta.front();
  g.max_new_tokens = o.max_new;
  g.ignore_eos = o.ignore_eos ? 1 : 0;
  hb_generation* raw = nullptr;
  check(hb_generate_text(model.get(), o.prompt.c_str(), &g, &raw));
  GenerationPtr gen(raw);
  if (!o.trace.empty()) check(hb_generation_write_trace(gen.get(), o.trace.c_str()));
  char* text = nullptr;
  check(hb_generation_text(gen.get(), &text));
  std::size_t count = 0;
  const std::int32_t* ids = hb_generation_tokens(gen.get(), &count);
  const json record{{"theta", g.confidence},
                    {"response", std::string(text)},
                    {"token_ids", std::vector<std::int32_t>(ids, ids + count)},
                    {"tokens", count},
                    {"macro_steps", hb_generation_macro_steps(gen.get())},
                    {"compression", hb_generation_compression(gen.get())},
                    {"cache_entries", hb_generation_cache_entries(gen.get())}};
  hb_string_free(text);
  // Responses are raw bytes; invalid UTF-8 is replaced in the text field only.
  const std::string line = record.dump(-1, ' ', false, json::error_handler_t::replace);
  if (o.out.empty()) {
    std::cout << line << '\n';
  } else {
    open_out(o.out) << line << '\n';
  }
  return exit_ok;
}

int run_sweep(const Options& o) {
  ModelPtr model = load_model(o);
  const std::string config = train_config(o);
  CorpusPtr eval = eval_corpus(o, config);
  std::vector<double> thetas = o.theta;
  if (thetas.empty()) thetas = {0.0, 0.25, 0.5, 0.6, 0.75, 1.0};
  std::vector<hb_sweep_row> rows(thetas.size());
  check(hb_sweep(model.get(), eval.get(), thetas.data(), thetas.size(), o.max_new, rows.data()));
  CsvSink csv(o.out);
  csv.stream() << "theta,compression,exact_match,tokens,macro_steps\n";
  for (const auto& r : rows) {
    csv.stream() << fmt(r.confidence) << ',' << fmt(r.compression) << ',' << fmt(r.exact_match)
                 << ',' << r.tokens << ',' << r.macro_steps << '\n';
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].compression > rows[i - 1].compression) {
      throw Failure{exit_invariant, "compression increased between theta " +
                                        fmt(rows[i - 1].confidence) + " and " +
                                        fmt(rows[i].confidence)};
    }
  }
  if (rows.back().confidence == 1.0 && rows.back().compression != 1.0) {
    throw Failure{exit_invariant, "compression at theta 1 is not 1"};
  }
  return exit_ok;
}

// Held-out prompts whose reference responses (plus EOS) cover the token budget.
CorpusPtr bench_workload(const Options& o, const std::string& config) {
  CorpusPtr all = eval_corpus(o, config);
  if (!o.corpus.empty() || o.size > 0) return all;
  const std::string path = o.out.empty() ? std::string() : o.out + ".workload.jsonl";
  std::vector<json> picked;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < hb_corpus_size(all.get()) && tokens < o.workload_tokens; ++i) {
    const char* prompt = nullptr;
    const char* response = nullptr;
    check(hb_corpus_example(all.get(), i, &prompt, &response));
    picked.push_back({{"prompt", prompt}, {"response", response}});
    tokens += std::string(response).size() + 1;
  }
  if (tokens < o.workload_tokens) usage("eval corpus too small for the bench workload");
  // Round-trip through a corpus file so the C API owns the subset.
  const std::string tmp = path.empty() ? std::string("bench_workload.jsonl") : path;
  {
    std::ofstream w = open_out(tmp);
    for (const auto& p : picked) w << p.dump() << '\n';
  }
  hb_corpus* c = nullptr;
  check(hb_corpus_load(tmp.c_str(), &c));
  if (path.empty()) std::remove(tmp.c_str());
  return CorpusPtr(c);
}

int run_bench(const Options& o) {
  ModelPtr model = load_model(o);
  const std::string config = train_config(o);
  CorpusPtr prompts = bench_workload(o, config);
  std::vector<double> thetas = o.theta;
  if (thetas.empty()) thetas = {0.0, 1.0};
  std::vector<hb_bench_row> rows(thetas.size());
  check(hb_bench(model.get(), prompts.get(), thetas.data(), thetas.size(), o.max_new, o.reps,
                 o.ignore_eos ? 1 : 0, rows.data()));
  double base_tps = std::nan("");
  for (const auto& r : rows) {
    if (r.confidence == 1.0) base_tps = r.tokens_per_second;
  }
  CsvSink csv(o.out);
  csv.stream() << "theta,tokens,macro_steps,seconds,tokens_per_second,ratio_vs_theta1\n";
  for (const auto& r : rows) {
    csv.stream() << fmt(r.confidence) << ',' << r.tokens << ',' << r.macro_steps << ','
                 << fmt(r.seconds) << ',' << fmt(r.tokens_per_second) << ','
                 << fmt(r.tokens_per_second / base_tps) << '\n';
  }
  return exit_ok;
}

template <typename T>
std::vector<T> or_default(const std::vector<T>& v, T fallback) {
  return v.empty() ? std::vector<T>{fallback} : v;
}

int run_cost(const Options& o) {
  CsvSink csv(o.out);
  csv.stream() << "n,C,c,alpha,c_ratio,hamburger_speedup,specdec_speedup\n";
  for (double n : or_default(o.n, 4.0)) {
    for (double big : or_default(o.big_c, 103.0)) {
      for (double small : or_default(o.small_c, 1.0)) {
        for (double a : or_default(o.alpha, 0.0)) {
          for (double cr : or_default(o.c_ratio, 0.0)) {
            double h = 0.0;
            double s = 0.0;
            check(hb_hamburger_speedup(n, big, small, &h));
            check(hb_specdec_speedup(a, n, cr, &s));
            csv.stream() << fmt(n) << ',' << fmt(big) << ',' << fmt(small) << ',' << fmt(a) << ','
                         << fmt(cr) << ',' << fmt(h) << ',' << fmt(s) << '\n';
          }
        }
      }
    }
  }
  if (!o.context.empty()) {
    const std::string model_cfg =
        o.config.empty() ? std::string() : section(train_config(o), "model");
    std::ostream& out = csv.stream();
    out << "S,flops_base_step,flops_micro_step,flops_micro_context,flops_fuse\n";
    for (std::size_t s : o.context) {
      hb_flops f{};
      check(hb_flops_at(model_cfg.c_str(), s, &f));
      out << s << ',' << fmt(f.base_step) << ',' << fmt(f.micro_step) << ',' << fmt(f.micro_context)
          << ',' << fmt(f.fuse) << '\n';
    }
  }
  return exit_ok;
}

int run_ablate(const Options& o) {
  const std::string config = train_config(o);
  std::vector<std::string> variants = o.variant;
  if (variants.empty()) variants = {"no-taps", "softmax-merge", "stop-token", "full"};
  MetricsWriter metrics(o.metrics);
  CsvSink csv(o.out);
  csv.stream() << "variant,overall_accuracy,beyond_first_accuracy,tokens,beyond_first_tokens,"
                  "mean_segment_length\n";
  for (const auto& v : variants) {
    hb_accuracy acc{};
    check(hb_ablate(config.c_str(), v.c_str(), &MetricsWriter::callback, &metrics, &acc, nullptr));
    csv.stream() << v << ',' << fmt(acc.overall) << ',' << fmt(acc.beyond_first) << ','
                 << acc.tokens << ',' << acc.beyond_first_tokens << ','
                 << fmt(acc.mean_segment_length) << '\n';
    csv.stream().flush();
  }
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical autoregressive generation with compositional embeddings"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON train config");
    sub->add_option("--seed", o.seed, "Seed override");
    sub->add_option("--recipe", o.recipe, "Corpus recipe: copy, pattern or arithmetic");
    sub->add_option("--out", o.out, "Output path");
  };
  auto modelled = [&](CLI::App* sub) {
    sub->add_option("--model", o.model, "Checkpoint path")->required();
    sub->add_option("--corpus", o.corpus, "Line-delimited corpus file");
    sub->add_option("--size", o.size, "Synthesized corpus size");
  };

  CLI::App* synth = app.add_subcommand("synth", "Write a synthetic corpus");
  common(synth);
  synth->add_option("--size", o.size, "Number of examples");

  CLI::App* segment = app.add_subcommand("segment", "Entropy-segment a corpus");
  common(segment);
  modelled(segment);
  segment->add_option("--tau", o.fixed_tau, "Fixed threshold (default: percentile)");

  CLI::App* train = app.add_subcommand("train", "Pretrain, segment and fuse-train a model");
  common(train);
  train->add_option("--metrics", o.metrics, "Metrics JSONL path (default stdout)");
  train->add_option("--segments", o.segments, "Write the training segmentation here");

  CLI::App* generate = app.add_subcommand("generate", "Generate a response");
  common(generate);
  generate->add_option("--model", o.model, "Checkpoint path")->required();
  generate->add_option("--prompt", o.prompt, "Prompt text")->required();
  generate->add_option("--theta", o.theta, "Confidence level");
  generate->add_option("--max-new", o.max_new, "Token budget");
  generate->add_option("--trace", o.trace, "Per-macro-step JSONL trace path");
  generate->add_flag("--ignore-eos", o.ignore_eos, "Decode through EOS");

  CLI::App* sweep = app.add_subcommand("sweep", "Compression / exact-match per confidence");
  common(sweep);
  modelled(sweep);
  sweep->add_option("--theta", o.theta, "Confidence levels (repeatable)");
  sweep->add_option("--max-new", o.max_new, "Token budget");

  CLI::App* bench = app.add_subcommand("bench", "Decode tokens/sec per confidence");
  common(bench);
  modelled(bench);
  bench->add_option("--theta", o.theta, "Confidence levels (repeatable, default 0 and 1)");
  bench->add_option("--max-new", o.max_new, "Token budget per prompt");
  bench->add_option("--reps", o.reps, "Repetitions (fastest kept)");
  bench->add_option("--workload-tokens", o.workload_tokens, "Reference tokens in the workload");
  bench->add_flag("--ignore-eos", o.ignore_eos, "Decode through EOS");

  CLI::App* cost = app.add_subcommand("cost", "Analytic speedup and FLOPs tables");
  common(cost);
  cost->add_option("--n", o.n, "Tokens per macro-step / drafting depth");
  cost->add_option("--C", o.big_c, "Base step cost");
  cost->add_option("--c", o.small_c, "Micro-step cost");
  cost->add_option("--alpha", o.alpha, "Speculative acceptance rate");
  cost->add_option("--c-ratio", o.c_ratio, "Draft/base latency ratio");
  cost->add_option("--S", o.context, "Context lengths for the FLOPs table");

  CLI::App* ablate = app.add_subcommand("ablate", "Train and evaluate ablation variants");
  common(ablate);
  ablate->add_option("--variant", o.variant,
                     "no-taps, softmax-merge, stop-token or full (repeatable, default all)");
  ablate->add_option("--metrics", o.metrics, "Metrics JSONL path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_ok : exit_usage;
  }

  try {
    if (*synth) return run_synth(o);
    if (*segment) return run_segment(o);
    if (*train) return run_train(o);
    if (*generate) return run_generate(o);
    if (*sweep) return run_sweep(o);
    if (*bench) return run_bench(o);
    if (*cost) return run_cost(o);
    if (*ablate) return run_ablate(o);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << '\n';
    return f.code;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_usage;
  }
  return exit_usage;
}
