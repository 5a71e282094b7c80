#include "minielm/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "minielm/common.hpp"
#include "minielm/parallel.hpp"
#include "minielm/rng.hpp"

namespace minielm::evalmetrics {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<size_t> prev(b.size() + 1, 0);
  std::vector<size_t> curr(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      curr[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], curr[j - 1]);
    }
    std::swap(prev, curr);
  }
  return prev[b.size()];
}

}  // namespace

int exact_match(const std::string& prediction, const std::string& reference) {
  return trim(prediction) == trim(reference) ? 1 : 0;
}

double rouge_l(const std::string& prediction, const std::string& reference) {
  const auto pred = corpus::tokenize(prediction);
  const auto ref = corpus::tokenize(reference);
  if (pred.empty() && ref.empty()) return 100.0;  // keeps exact_match=1 => rouge_l=100
  if (pred.empty() || ref.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(pred, ref));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(pred.size());
  const double recall = lcs / static_cast<double>(ref.size());
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

double xentropy(const policy::PolicyParameters& params,
                std::span<const training::SftExample> pairs) {
  if (pairs.empty()) throw std::invalid_argument("xentropy: empty pair set");
  return training::sft_loss_value(params, pairs);
}

double mean_length(std::span<const policy::TokenSequence> predictions) {
  if (predictions.empty()) throw std::invalid_argument("mean_length: empty prediction list");
  double total = 0.0;
  for (const auto& p : predictions) total += static_cast<double>(p.length_without_eos());
  return total / static_cast<double>(predictions.size());
}

OfflineEval offline_eval(const policy::PolicyParameters& params, const corpus::Vocabulary& vocab,
                         std::span<const q2q::DirectedPair> eval_pairs, int jobs) {
  if (eval_pairs.empty()) throw std::invalid_argument("offline_eval: empty eval split");
  const auto examples = training::to_sft_examples(eval_pairs, vocab);

  std::vector<policy::TokenSequence> rewrites(eval_pairs.size());
  parallel_for(eval_pairs.size(), jobs, [&](size_t i) {
    rewrites[i] = policy::greedy_decode(params, examples[i].prompt);
  });

  OfflineEval out;
  double em = 0.0;
  double rl = 0.0;
  for (size_t i = 0; i < eval_pairs.size(); ++i) {
    const std::string prediction = vocab.decode_to_text(rewrites[i].ids);
    em += exact_match(prediction, eval_pairs[i].target_text);
    rl += rouge_l(prediction, eval_pairs[i].target_text);
  }
  const auto n = static_cast<double>(eval_pairs.size());
  out.exact_match = 100.0 * em / n;
  out.rouge_l = rl / n;
  out.xentropy = xentropy(params, examples);
  out.mean_length = mean_length(rewrites);
  return out;
}

EvalReport online_eval(const policy::PolicyParameters& params, const corpus::Vocabulary& vocab,
                       std::span<const corpus::QueryRecord> queries,
                       const search::SearchIndex& index, feedback::JudgeClient& judge,
                       rewards::RelevanceScorer& scorer,
                       std::span<const feedback::UserProfile> profiles,
                       const corpus::Catalog& catalog, const OnlineEvalConfig& config) {
  if (queries.empty()) throw std::invalid_argument("online_eval: empty query set");
  if (profiles.empty()) throw std::invalid_argument("online_eval: empty profile pool");

  struct PerQuery {
    rewards::RewardVector reward;
  };
  std::vector<PerQuery> rows(queries.size());

  parallel_for(queries.size(), config.jobs, [&](size_t i) {
    const auto& query = queries[i];
    const auto prompt = policy::make_prompt(vocab, query.text);
    const auto rewrite = policy::greedy_decode(params, prompt);
    const std::string rewrite_text = vocab.decode_to_text(rewrite.ids);

    const auto baseline = index.retrieve(query.text, config.top_k);
    const auto retrieved = index.retrieve(rewrite_text, config.top_k);

    rewards::RewardVector reward;
    reward.relevance = rewards::relevance_score(scorer, query.text, retrieved, catalog);
    reward.diversity = rewards::diversity_score(baseline, retrieved);
    const auto& profile =
        profiles[derive_seed(config.seed, "eval_profile/" + query.query_id) % profiles.size()];
    const auto engagement = feedback::engagement_scores(
        judge, profile, query.text, retrieved, catalog, config.judge_temperature,
        derive_seed(config.seed, "eval_judge/" + query.query_id));
    reward.click = engagement.click;
    reward.add2cart = engagement.add_to_cart;
    reward.purchase = engagement.purchase;
    rows[i].reward = reward;
  });

  EvalReport report;
  report.query_count = queries.size();
  for (const auto& row : rows) {
    report.relevance += row.reward.relevance;
    report.diversity += row.reward.diversity;
    report.click += row.reward.click;
    report.add2cart += row.reward.add2cart;
    report.purchase += row.reward.purchase;
  }
  const auto n = static_cast<double>(queries.size());
  report.relevance /= n;
  report.diversity /= n;
  report.click /= n;
  report.add2cart /= n;
  report.purchase /= n;
  return report;
}

CoverageReport product_coverage(const policy::PolicyParameters& params,
                                const corpus::Vocabulary& vocab,
                                std::span<const corpus::QueryRecord> queries,
                                std::span<const corpus::RelevanceJudgment> judgments,
                                const search::SearchIndex& index, int n_rewrites, uint64_t seed,
                                int top_k, double temperature) {
  if (n_rewrites < 1) throw std::invalid_argument("product_coverage: n_rewrites must be >= 1");

  // Relevant product sets per query id (labels E or S).
  std::map<std::string, std::set<std::string>> relevant;
  for (const auto& j : judgments) {
    if (j.label == corpus::EsciLabel::E || j.label == corpus::EsciLabel::S) {
      relevant[j.query_id].insert(j.product_id);
    }
  }

  CoverageReport report;
  for (const auto& query : queries) {
    const auto prompt = policy::make_prompt(vocab, query.text);

    std::vector<policy::TokenSequence> rewrites;
    if (n_rewrites == 1) {
      rewrites.push_back(policy::greedy_decode(params, prompt));
    } else {
      std::set<std::vector<int32_t>> seen;
      const int budget = 10 * n_rewrites;
      for (int attempt = 0; attempt < budget; ++attempt) {
        auto candidate = policy::sample_rewrite(
            params, prompt, temperature,
            derive_seed(seed, "coverage/" + query.query_id, static_cast<uint64_t>(attempt)));
        if (seen.insert(candidate.ids).second) {
          rewrites.push_back(std::move(candidate));
          if (static_cast<int>(rewrites.size()) == n_rewrites) break;
        }
      }
      // Budget exhausted: pad with repeats of the last sample so every query
      // still contributes n_rewrites retrievals.
      while (static_cast<int>(rewrites.size()) < n_rewrites && !rewrites.empty()) {
        rewrites.push_back(rewrites.back());
      }
    }

    const auto rel_it = relevant.find(query.query_id);
    std::set<std::string> covered;
    if (rel_it != relevant.end()) {
      for (const auto& rewrite : rewrites) {
        const auto retrieved = index.retrieve(vocab.decode_to_text(rewrite.ids), top_k);
        for (const auto& scored : retrieved.products) {
          if (rel_it->second.count(scored.product_id)) covered.insert(scored.product_id);
        }
      }
    }
    report.per_query.push_back(static_cast<double>(covered.size()));
    report.query_ids.push_back(query.query_id);
  }

  for (double c : report.per_query) report.mean_coverage += c;
  if (!report.per_query.empty()) {
    report.mean_coverage /= static_cast<double>(report.per_query.size());
  }
  return report;
}

std::string EvalReport::to_json(uint64_t seed) const {
  json j{{"seed", seed},
         {"exact_match", exact_match},
         {"rouge_l", rouge_l},
         {"xentropy", xentropy},
         {"mean_length", mean_length},
         {"relevance", relevance},
         {"diversity", diversity},
         {"click", click},
         {"add2cart", add2cart},
         {"purchase", purchase},
         {"coverage", coverage},
         {"query_count", query_count}};
  return j.dump(2);
}

std::string EvalReport::tsv_header() {
  return "exact_match\trouge_l\txentropy\tmean_length\trelevance\tdiversity\tclick\tadd2cart\t"
         "purchase\tcoverage\tquery_count";
}

std::string EvalReport::tsv_row() const {
  std::ostringstream out;
  out.precision(17);
  out << exact_match << '\t' << rouge_l << '\t' << xentropy << '\t' << mean_length << '\t'
      << relevance << '\t' << diversity << '\t' << click << '\t' << add2cart << '\t' << purchase
      << '\t' << coverage << '\t' << query_count;
  return out.str();
}

}  // namespace minielm::evalmetrics
