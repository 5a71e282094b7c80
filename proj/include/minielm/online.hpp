#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "minielm/corpus.hpp"
#include "minielm/evalmetrics.hpp"
#include "minielm/feedback.hpp"
#include "minielm/policy.hpp"
#include "minielm/rewards.hpp"
#include "minielm/search.hpp"
#include "minielm/training.hpp"

namespace minielm::online {

// Trailing moving mean; the first window-1 entries average over the prefix
// that exists so far.
std::vector<double> smooth_series(std::span<const double> values, int window);

struct IterationRecord {
  int iteration = 0;
  std::vector<std::string> query_ids;          // B entries
  std::vector<std::string> rewrites;           // 2B entries, decoded text
  std::vector<rewards::RewardVector> reward_vectors;  // 2B entries
  int tie_count = 0;
  int pairs_used = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct OnlineRunState {
  int iterations_completed = 0;
  std::vector<double> chosen_aggregate;    // per-iteration mean over surviving pairs
  std::vector<double> rejected_aggregate;
  std::vector<double> dpo_loss;
  std::vector<int> tie_counts;
  std::vector<std::pair<int, evalmetrics::EvalReport>> evaluations;
};

using RunLogSink = std::function<void(const IterationRecord&)>;
using EvalSink = std::function<void(int iteration, const evalmetrics::EvalReport&)>;
using CheckpointSink = std::function<void(int iteration, const policy::PolicyParameters&)>;

struct OnlineDeps {
  const corpus::Vocabulary* vocab = nullptr;
  const search::SearchIndex* index = nullptr;
  feedback::JudgeClient* judge = nullptr;
  rewards::RelevanceScorer* scorer = nullptr;
  const corpus::Catalog* catalog = nullptr;
  std::span<const feedback::UserProfile> profiles;
  std::span<const corpus::QueryRecord> train_queries;
  std::span<const corpus::QueryRecord> eval_queries;
};

struct OnlineConfig {
  int iterations = 1000;
  int eval_every = 50;
  int batch_size = 16;
  double temperature = 0.8;
  double learning_rate = 0.05;
  double beta = 0.5;
  double clip_norm = 1.0;
  training::OptimizerKind optimizer = training::OptimizerKind::sgd;
  double momentum = 0.0;
  bool dpo_use_reference = false;
  int top_k = 10;
  rewards::Weights weights = rewards::kEqualWeights;
  double judge_temperature = 0.0;
  uint64_t seed = 42;
  int jobs = 1;
};

struct OnlineResult {
  policy::PolicyParameters params;
  OnlineRunState state;
};

// Simulated deployment: per iteration draw B queries, sample two rewrites
// each, retrieve, score all five reward components, keep non-tie preference
// pairs and apply one DPO update; evaluate the held-out queries and emit a
// checkpoint every eval_every iterations. Fully deterministic given seeds and
// a deterministic judge.
OnlineResult run_online(policy::PolicyParameters params, const OnlineDeps& deps,
                        const OnlineConfig& config, const RunLogSink& log_sink = {},
                        const EvalSink& eval_sink = {}, const CheckpointSink& checkpoint_sink = {});

struct TraceRow {
  std::string checkpoint_name;
  std::string rewrite;
  rewards::RewardVector reward;
};

// Greedy rewrite of one query under each checkpoint, with its rewards;
// the qualitative-evolution view over training time.
std::vector<TraceRow> trace_query(const std::string& query_text,
                                  std::span<const std::pair<std::string, policy::PolicyParameters>> checkpoints,
                                  const OnlineDeps& deps, const OnlineConfig& config);

}  // namespace minielm::online
