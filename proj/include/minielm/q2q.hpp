#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "minielm/corpus.hpp"

namespace minielm::q2q {

// Query-product adjacency restricted to an allowed ESCI label set.
struct BipartiteGraph {
  std::map<std::string, std::set<std::string>> query_to_products;
  std::map<std::string, std::set<std::string>> product_to_queries;

  size_t edge_count() const;
};

inline const std::set<corpus::EsciLabel>& default_allowed_labels() {
  static const std::set<corpus::EsciLabel> labels{corpus::EsciLabel::E, corpus::EsciLabel::S};
  return labels;
}

BipartiteGraph build_graph(std::span<const corpus::RelevanceJudgment> judgments,
                           const std::set<corpus::EsciLabel>& allowed_labels = default_allowed_labels());

enum class Verdict : uint8_t { unfiltered, accepted, rejected };

struct QueryPair {
  std::string source;  // query_id, < target for mined pairs
  std::string target;
  std::set<std::string> shared_products;
  Verdict verdict = Verdict::unfiltered;
};

// All unordered query pairs sharing at least k_shared products, sorted by
// (source, target). Each unordered pair appears exactly once.
std::vector<QueryPair> mine_candidates(const BipartiteGraph& graph, int k_shared);

// Semantic-equivalence filters over candidate pairs. The judge-backed filter
// asks an external text-generation service a fixed yes/no question.
class EquivalenceFilter {
 public:
  virtual ~EquivalenceFilter() = default;
  virtual bool equivalent(const corpus::QueryRecord& a, const corpus::QueryRecord& b) = 0;
  virtual std::string name() const = 0;
};

class AcceptAllFilter : public EquivalenceFilter {
 public:
  bool equivalent(const corpus::QueryRecord&, const corpus::QueryRecord&) override { return true; }
  std::string name() const override { return "accept_all"; }
};

// Token-set Jaccard threshold; the desk-scale stand-in for an LLM filter.
class LexicalFilter : public EquivalenceFilter {
 public:
  explicit LexicalFilter(double threshold = 0.5) : threshold_(threshold) {}
  bool equivalent(const corpus::QueryRecord& a, const corpus::QueryRecord& b) override;
  std::string name() const override { return "lexical"; }

  static double jaccard(std::span<const std::string> a, std::span<const std::string> b);

 private:
  double threshold_;
};

// Yes/no completion callback: receives the rendered filter prompt, returns the
// raw model reply. Wired to a judge client at the CLI layer.
using YesNoCompleter = std::function<std::string(const std::string& prompt)>;

std::string render_equivalence_prompt(const std::string& query_a, const std::string& query_b);

class JudgeFilter : public EquivalenceFilter {
 public:
  JudgeFilter(YesNoCompleter completer, int retry_budget = 3)
      : completer_(std::move(completer)), retry_budget_(retry_budget) {}
  bool equivalent(const corpus::QueryRecord& a, const corpus::QueryRecord& b) override;
  std::string name() const override { return "judge"; }

 private:
  YesNoCompleter completer_;
  int retry_budget_;
};

struct FilterOutcome {
  std::vector<QueryPair> accepted;
  size_t rejected = 0;
};

FilterOutcome filter_pairs(std::vector<QueryPair> pairs, const corpus::QuerySet& queries,
                           EquivalenceFilter& filter);

struct DirectedPair {
  std::string source_text;
  std::string target_text;
  int shared_product_count = 0;
  corpus::Split split = corpus::Split::train;
};

struct Q2QDataset {
  std::vector<DirectedPair> train;
  std::vector<DirectedPair> eval;
  int k_shared = 0;
  size_t candidate_count = 0;
  size_t accepted_count = 0;
  size_t rejected_count = 0;
};

// Splits accepted pairs at the undirected level (eval gets round(fraction*n))
// and emits every retained pair in both directions.
Q2QDataset symmetrize_and_split(std::span<const QueryPair> accepted,
                                const corpus::QuerySet& queries, double eval_fraction,
                                uint64_t seed);

void write_q2q_file(const Q2QDataset& dataset, const std::string& path, uint64_t seed);
Q2QDataset read_q2q_file(const std::string& path);

}  // namespace minielm::q2q
