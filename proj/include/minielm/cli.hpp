#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "minielm/policy.hpp"
#include "minielm/rewards.hpp"
#include "minielm/training.hpp"

namespace minielm::cli {

struct CorpusConfig {
  std::string products_path;
  std::string judgments_path;
  int min_token_frequency = 1;
};

struct Q2qConfig {
  int k_shared = 2;
  double eval_fraction = 0.2;
  std::string filter = "lexical";  // lexical | accept_all | judge
  double jaccard_threshold = 0.5;
};

struct SearchConfig {
  int top_k = 10;
  double k1 = 1.2;
  double b = 0.75;
};

struct PolicyPreset {
  int context_window = 3;
  int embedding_dim = 32;
  int hidden_dim = 64;
  int max_generation_len = 16;
};

struct EndpointConfig {
  std::string url;
  std::string api_key;
  int timeout_ms = 10000;
  int retries = 3;
  int max_tokens = 8;
  double temperature = 0.0;
};

struct RunConfig {
  uint64_t seed = 42;
  int jobs = 1;
  std::string output_dir = "out";
  CorpusConfig corpus;
  Q2qConfig q2q;
  SearchConfig search;
  PolicyPreset teacher{3, 64, 256, 16};
  PolicyPreset student{3, 32, 64, 16};
  training::TrainingConfig training;
  EndpointConfig judge;
  EndpointConfig relevance;
  std::string relevance_scorer = "lexical";  // lexical | external
  rewards::Weights reward_weights = rewards::kEqualWeights;
  int profile_pool_size = 100;
};

// Parses the JSON config document, applies environment credential overrides
// (MINIELM_JUDGE_API_KEY, MINIELM_RELEVANCE_API_KEY) and validates every
// range and referenced path. Raises ConfigError on any problem.
RunConfig load_config(const std::string& path);

// Post-parse validation, exposed so tests can probe individual rules.
void validate_config(const RunConfig& config);

struct CommandOptions {
  std::optional<uint64_t> seed_override;
  std::optional<int> jobs_override;
  bool force = false;
  bool mock_judge = false;
};

int cmd_ingest(const RunConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_mine(const RunConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_train_offline(const RunConfig& config, const CommandOptions& options, std::ostream& out,
                      bool resume = false);
int cmd_train_online(const RunConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_eval(const RunConfig& config, const CommandOptions& options,
             const std::string& checkpoint_path, std::ostream& out);
int cmd_coverage(const RunConfig& config, const CommandOptions& options,
                 const std::string& checkpoint_path, int n_rewrites, std::ostream& out);
int cmd_rewrite(const RunConfig& config, const CommandOptions& options,
                const std::string& checkpoint_path, const std::string& query_text,
                const std::vector<std::string>& trace_checkpoints, std::ostream& out);

// Maps an exception escaping a command to the documented exit codes.
int exit_code_for_current_exception();

}  // namespace minielm::cli
