#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "minielm/corpus.hpp"
#include "minielm/feedback.hpp"
#include "minielm/policy.hpp"
#include "minielm/rewards.hpp"
#include "minielm/search.hpp"
#include "minielm/training.hpp"

namespace minielm::evalmetrics {

struct EvalReport {
  double exact_match = 0.0;   // percentage [0, 100]
  double rouge_l = 0.0;       // percentage [0, 100]
  double xentropy = 0.0;      // mean per-token NLL
  double mean_length = 0.0;   // tokens, EOS excluded
  double relevance = 0.0;
  double diversity = 0.0;
  double click = 0.0;
  double add2cart = 0.0;
  double purchase = 0.0;
  double coverage = 0.0;
  size_t query_count = 0;

  std::string to_json(uint64_t seed) const;
  std::string tsv_row() const;
  static std::string tsv_header();
};

// 1 iff the whitespace-trimmed strings are byte-equal.
int exact_match(const std::string& prediction, const std::string& reference);

// Token-level LCS F1 on the corpus tokenizer's output, scaled to [0, 100].
double rouge_l(const std::string& prediction, const std::string& reference);

// Mean per-token NLL of the eval pairs; identical to the SFT loss value.
double xentropy(const policy::PolicyParameters& params,
                std::span<const training::SftExample> pairs);

double mean_length(std::span<const policy::TokenSequence> predictions);

// Offline metrics of greedy rewrites against the eval pair targets.
struct OfflineEval {
  double exact_match = 0.0;
  double rouge_l = 0.0;
  double xentropy = 0.0;
  double mean_length = 0.0;
};
OfflineEval offline_eval(const policy::PolicyParameters& params, const corpus::Vocabulary& vocab,
                         std::span<const q2q::DirectedPair> eval_pairs, int jobs = 1);

struct OnlineEvalConfig {
  int top_k = 10;
  rewards::Weights weights = rewards::kEqualWeights;
  uint64_t seed = 0;  // drives the per-query profile choice and judge seeds
  double judge_temperature = 0.0;
  int jobs = 1;
};

// Greedy rewrite per held-out query; means of the five reward components.
// Profile choice per query is a stable function of (seed, query_id).
EvalReport online_eval(const policy::PolicyParameters& params, const corpus::Vocabulary& vocab,
                       std::span<const corpus::QueryRecord> queries,
                       const search::SearchIndex& index, feedback::JudgeClient& judge,
                       rewards::RelevanceScorer& scorer,
                       std::span<const feedback::UserProfile> profiles,
                       const corpus::Catalog& catalog, const OnlineEvalConfig& config);

struct CoverageReport {
  double mean_coverage = 0.0;
  std::vector<double> per_query;        // aligned with the query span
  std::vector<std::string> query_ids;
};

// Distinct relevant (E/S for the original query) products retrieved across
// n_rewrites rewrites per query. n_rewrites == 1 decodes greedily; larger
// values sample distinct rewrites, re-drawing duplicates up to a bounded
// budget.
CoverageReport product_coverage(const policy::PolicyParameters& params,
                                const corpus::Vocabulary& vocab,
                                std::span<const corpus::QueryRecord> queries,
                                std::span<const corpus::RelevanceJudgment> judgments,
                                const search::SearchIndex& index, int n_rewrites, uint64_t seed,
                                int top_k = 10, double temperature = 0.8);

}  // namespace minielm::evalmetrics
