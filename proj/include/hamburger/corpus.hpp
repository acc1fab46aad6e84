#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace hamburger {

struct CorpusExample {
  std::string prompt;
  std::string response;
};

struct Corpus {
  std::vector<CorpusExample> examples;
  std::string recipe;
  std::uint64_t seed = 0;
};

// Recipes:
//   copy        "copy:<payload>"      -> payload
//   pattern     two periods of a cycle -> the cycle continued
//   arithmetic  "<a>+<b>"             -> "The sum of <a> and <b> is <a+b>."
Corpus synth_corpus(const std::string& recipe, std::uint64_t seed, std::size_t size);

const std::vector<std::string>& corpus_recipes();

// Line-delimited {"prompt": ..., "response": ...} records.
Corpus read_corpus(const std::string& path);
void write_corpus(const Corpus& corpus, const std::string& path);

}  // namespace hamburger
