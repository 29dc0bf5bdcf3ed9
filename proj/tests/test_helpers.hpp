#pragma once

#include <random>

#include "settp/backbone.hpp"
#include "settp/corpus.hpp"

namespace testing_support {

/// Eight-token vocabulary: four specials plus a b c d.
inline settp::Vocabulary tiny_vocab() { return settp::Vocabulary({"a", "b", "c", "d"}); }

inline settp::BackboneConfig tiny_config(std::uint64_t seed = 1) {
  settp::BackboneConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 1;
  c.ffn_width = 16;
  c.max_positions = 16;
  c.seed = seed;
  return c;
}

inline settp::SoftPrompt random_prompt(std::size_t m, std::size_t e, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  settp::SoftPrompt p{settp::Matrix(m, e), "test"};
  for (double& v : p.matrix.values()) v = d(rng);
  return p;
}

}  // namespace testing_support

#include <filesystem>
#include <fstream>
#include <sstream>

namespace testing_support {

inline std::filesystem::path scratch_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("settp_scratch_" + name);
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testing_support
