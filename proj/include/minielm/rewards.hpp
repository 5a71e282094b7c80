#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "minielm/corpus.hpp"
#include "minielm/policy.hpp"
#include "minielm/search.hpp"

namespace minielm::rewards {

struct RewardVector {
  double relevance = 0.0;   // [0, 1]
  double diversity = 0.0;   // >= 0
  double click = 0.0;       // [0, 1]
  double add2cart = 0.0;    // [0, 1]
  double purchase = 0.0;    // [0, 1]
};

using Weights = std::array<double, 5>;
inline constexpr Weights kEqualWeights{1.0, 1.0, 1.0, 1.0, 1.0};

// Query-product relevance in [0, 1]; the paper's learned scorer is replaced
// by this interface with a lexical default.
class RelevanceScorer {
 public:
  virtual ~RelevanceScorer() = default;
  virtual double score(const std::string& query_text, const corpus::ProductRecord& product) = 0;
};

// Jaccard overlap between query tokens and product title tokens.
class LexicalRelevanceScorer : public RelevanceScorer {
 public:
  double score(const std::string& query_text, const corpus::ProductRecord& product) override;
};

// Mean per-product score against the ORIGINAL query; empty list scores 0.
double relevance_score(RelevanceScorer& scorer, const std::string& original_query,
                       const search::RetrievalResult& products, const corpus::Catalog& catalog);

// (|P_rewrite| - |P_orig ∩ P_rewrite|) / |P_orig| on product-id sets.
// Both empty -> 0; P_orig empty and P_rewrite non-empty -> 1.
double diversity_score(const search::RetrievalResult& baseline,
                       const search::RetrievalResult& candidate);

// Weighted mean; weights must be non-negative with a positive sum.
double aggregate_reward(const RewardVector& v, const Weights& weights = kEqualWeights);

struct ScoredRewrite {
  policy::TokenSequence tokens;
  std::string text;
  RewardVector reward;
  double aggregate = 0.0;
};

struct PreferencePair {
  std::string query;
  std::vector<int32_t> prompt;
  ScoredRewrite chosen;
  ScoredRewrite rejected;
  bool tie = false;  // aggregates were exactly equal; order decided by coin flip
};

// Orders two scored rewrites into a preference pair. Identical token
// sequences are degenerate and yield nullopt; exact aggregate ties are broken
// by a seeded coin flip with the tie flag set.
std::optional<PreferencePair> make_preference_pair(const std::string& query,
                                                   std::span<const int32_t> prompt,
                                                   ScoredRewrite a, ScoredRewrite b,
                                                   uint64_t seed);

}  // namespace minielm::rewards
