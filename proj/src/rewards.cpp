#include "minielm/rewards.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "minielm/common.hpp"
#include "minielm/rng.hpp"

namespace minielm::rewards {

double LexicalRelevanceScorer::score(const std::string& query_text,
                                     const corpus::ProductRecord& product) {
  const auto q = corpus::tokenize(query_text);
  const auto t = corpus::tokenize(product.title);
  const std::set<std::string> qs(q.begin(), q.end());
  const std::set<std::string> ts(t.begin(), t.end());
  if (qs.empty() && ts.empty()) return 0.0;
  size_t inter = 0;
  for (const auto& token : qs) inter += ts.count(token);
  const size_t uni = qs.size() + ts.size() - inter;
  const double jaccard = static_cast<double>(inter) / static_cast<double>(uni);
  return std::clamp(jaccard, 0.0, 1.0);
}

double relevance_score(RelevanceScorer& scorer, const std::string& original_query,
                       const search::RetrievalResult& products, const corpus::Catalog& catalog) {
  if (products.empty()) return 0.0;
  double total = 0.0;
  for (const auto& scored : products.products) {
    const auto* record = catalog.find(scored.product_id);
    if (!record) throw DataError("relevance_score: unknown product id '" + scored.product_id + "'");
    total += std::clamp(scorer.score(original_query, *record), 0.0, 1.0);
  }
  return total / static_cast<double>(products.size());
}

double diversity_score(const search::RetrievalResult& baseline,
                       const search::RetrievalResult& candidate) {
  if (baseline.empty() && candidate.empty()) return 0.0;
  if (baseline.empty()) return 1.0;
  const auto base_ids = baseline.ids();
  const std::set<std::string> base_set(base_ids.begin(), base_ids.end());
  size_t overlap = 0;
  for (const auto& scored : candidate.products) overlap += base_set.count(scored.product_id);
  const double fresh = static_cast<double>(candidate.size()) - static_cast<double>(overlap);
  return fresh / static_cast<double>(base_set.size());
}

double aggregate_reward(const RewardVector& v, const Weights& weights) {
  double weight_sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("aggregate_reward: weights must be non-negative");
    weight_sum += w;
  }
  if (weight_sum <= 0.0) throw std::invalid_argument("aggregate_reward: weights must not all be zero");
  const double dot = weights[0] * v.relevance + weights[1] * v.diversity + weights[2] * v.click +
                     weights[3] * v.add2cart + weights[4] * v.purchase;
  return dot / weight_sum;
}

std::optional<PreferencePair> make_preference_pair(const std::string& query,
                                                   std::span<const int32_t> prompt,
                                                   ScoredRewrite a, ScoredRewrite b,
                                                   uint64_t seed) {
  if (a.tokens == b.tokens) return std::nullopt;

  PreferencePair pair;
  pair.query = query;
  pair.prompt.assign(prompt.begin(), prompt.end());
  if (a.aggregate > b.aggregate) {
    pair.chosen = std::move(a);
    pair.rejected = std::move(b);
  } else if (b.aggregate > a.aggregate) {
    pair.chosen = std::move(b);
    pair.rejected = std::move(a);
  } else {
    pair.tie = true;
    Rng rng(derive_seed(seed, "preference_tie"));
    const bool a_first = rng.uniform() < 0.5;
    pair.chosen = a_first ? std::move(a) : std::move(b);
    pair.rejected = a_first ? std::move(b) : std::move(a);
  }
  return pair;
}

}  // namespace minielm::rewards
