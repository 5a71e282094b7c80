#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "minielm/corpus.hpp"

namespace minielm::policy {

enum class Role : uint8_t { teacher, student };

struct PolicyConfig {
  Role role = Role::student;
  int context_window = 3;     // n previous tokens fed to the model
  int embedding_dim = 32;
  int hidden_dim = 64;
  int vocab_size = 0;
  int max_generation_len = 16;
};

PolicyConfig teacher_preset(int vocab_size);
PolicyConfig student_preset(int vocab_size);

// The five trainable tensors. Shared between parameters, gradients and
// optimizer moment buffers so elementwise updates stay uniform.
struct ParameterSet {
  std::vector<double> embedding;  // vocab_size x embedding_dim, row-major
  std::vector<double> hidden_w;   // (n * embedding_dim) x hidden_dim, row-major
  std::vector<double> hidden_b;   // hidden_dim
  std::vector<double> output_w;   // hidden_dim x vocab_size, row-major
  std::vector<double> output_b;   // vocab_size

  static ParameterSet zeros_like(const PolicyConfig& config);
  size_t count() const;
  bool same_shape(const ParameterSet& other) const;
  bool all_finite() const;
  double squared_norm() const;
  void add_scaled(const ParameterSet& other, double scale);
  void scale(double factor);
};

struct PolicyParameters {
  PolicyConfig config;
  ParameterSet tensors;

  size_t parameter_count() const { return tensors.count(); }
};

struct TokenSequence {
  std::vector<int32_t> ids;

  bool terminal() const;  // ends with EOS
  size_t length_without_eos() const;
  bool operator==(const TokenSequence&) const = default;
};

// Prompt conditioning: the query's token ids followed by BOS as separator.
std::vector<int32_t> make_prompt(const corpus::Vocabulary& vocab, const std::string& query_text);

// Uniform init in (-1/sqrt(fan_in), +1/sqrt(fan_in)) per tensor, zero biases.
PolicyParameters init_params(const PolicyConfig& config, uint64_t seed);

// softmax(output(tanh(hidden(concat(embeddings))))) over the whole vocabulary.
// `context` holds up to n trailing ids; shorter contexts are left-padded with
// PAD, longer ones use their last n entries. Invalid ids are an error.
std::vector<double> next_token_distribution(const PolicyParameters& params,
                                            std::span<const int32_t> context);

// Sum of per-step log probabilities of `response` conditioned on the prompt
// plus the already-generated prefix. Response must end with EOS.
double sequence_logprob(const PolicyParameters& params, std::span<const int32_t> prompt,
                        const TokenSequence& response);

TokenSequence sample_rewrite(const PolicyParameters& params, std::span<const int32_t> prompt,
                             double temperature, uint64_t seed);

TokenSequence greedy_decode(const PolicyParameters& params, std::span<const int32_t> prompt);

// One teacher-forced position: the n-token context and dL/dlogits at it.
struct PositionGradient {
  std::vector<int32_t> context;
  std::vector<double> dlogits;
};

// Exact analytic gradient of the forward computation, accumulated over the
// given positions. Shapes must match the parameters.
ParameterSet backprop(const PolicyParameters& params, std::span<const PositionGradient> positions);

// Versioned binary checkpoint with config echo and vocabulary hash; loading
// verifies both against the vocabulary in use.
void save_checkpoint(const PolicyParameters& params, const corpus::Vocabulary& vocab,
                     uint64_t seed, const std::string& path);
PolicyParameters load_checkpoint(const std::string& path, const corpus::Vocabulary& vocab);

// Internal forward context assembly, exposed for loss implementations.
std::vector<int32_t> window_context(std::span<const int32_t> prefix, int n);

}  // namespace minielm::policy
