#include "hamburger/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "hamburger/error.hpp"
#include "json.hpp"

namespace hamburger {

namespace {

constexpr std::size_t pattern_response_length = 16;

char random_letter(std::mt19937_64& rng) {
  return static_cast<char>('a' + std::uniform_int_distribution<int>(0, 25)(rng));
}

CorpusExample copy_example(std::mt19937_64& rng) {
  const int len = std::uniform_int_distribution<int>(4, 10)(rng);
  std::string payload;
  for (int i = 0; i < len; ++i) payload.push_back(random_letter(rng));
  return {"copy:" + payload, payload};
}

CorpusExample pattern_example(std::mt19937_64& rng) {
  const int period = std::uniform_int_distribution<int>(2, 4)(rng);
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  std::shuffle(alphabet.begin(), alphabet.end(), rng);
  const std::string cycle = alphabet.substr(0, static_cast<std::size_t>(period));
  std::string response;
  for (std::size_t i = 0; i < pattern_response_length; ++i) {
    response.push_back(cycle[i % cycle.size()]);
  }
  return {cycle + cycle, response};
}

CorpusExample arithmetic_example(std::mt19937_64& rng) {
  const int a = std::uniform_int_distribution<int>(0, 99)(rng);
  const int b = std::uniform_int_distribution<int>(0, 99)(rng);
  const std::string sa = std::to_string(a);
  const std::string sb = std::to_string(b);
  return {sa + "+" + sb, "The sum of " + sa + " and " + sb + " is " + std::to_string(a + b) + "."};
}

}  // namespace

const std::vector<std::string>& corpus_recipes() {
  static const std::vector<std::string> names{"copy", "pattern", "arithmetic"};
  return names;
}

Corpus synth_corpus(const std::string& recipe, std::uint64_t seed, std::size_t size) {
  CorpusExample (*make)(std::mt19937_64&) = nullptr;
  if (recipe == "copy") {
    make = copy_example;
  } else if (recipe == "pattern") {
    make = pattern_example;
  } else if (recipe == "arithmetic") {
    make = arithmetic_example;
  } else {
    fail(ErrorKind::argument, "unknown corpus recipe '" + recipe + "'");
  }
  Corpus corpus;
  corpus.recipe = recipe;
  corpus.seed = seed;
  corpus.examples.reserve(size);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < size; ++i) corpus.examples.push_back(make(rng));
  return corpus;
}

Corpus read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open corpus '" + path + "'");
  Corpus corpus;
  corpus.recipe = "file";
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusExample ex{j.at("prompt").get<std::string>(), j.at("response").get<std::string>()};
      if (ex.response.empty()) {
        fail(ErrorKind::data, path + ":" + std::to_string(line_no) + ": empty response");
      }
      corpus.examples.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::data, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write corpus '" + path + "'");
  for (const auto& ex : corpus.examples) {
    nlohmann::json j = {{"prompt", ex.prompt}, {"response", ex.response}};
    out << j.dump() << '\n';
  }
}

}  // namespace hamburger
