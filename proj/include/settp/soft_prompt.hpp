#pragma once

#include <string>

#include "settp/matrix.hpp"

namespace settp {

/// m x e matrix of prefix embeddings prepended to the encoder input.
struct SoftPrompt {
  Matrix matrix;
  std::string prompt_id;

  std::size_t length() const { return matrix.rows(); }
  std::size_t width() const { return matrix.cols(); }

  friend bool operator==(const SoftPrompt&, const SoftPrompt&) = default;
};

/// Stacks prompts vertically: [a; b].
SoftPrompt concat_prompts(const SoftPrompt& a, const SoftPrompt& b, std::string prompt_id);

}  // namespace settp
