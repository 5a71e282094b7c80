#include "minielm/q2q.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "minielm/common.hpp"
#include "minielm/rng.hpp"

namespace minielm::q2q {

using nlohmann::json;

size_t BipartiteGraph::edge_count() const {
  size_t n = 0;
  for (const auto& [q, products] : query_to_products) n += products.size();
  return n;
}

BipartiteGraph build_graph(std::span<const corpus::RelevanceJudgment> judgments,
                           const std::set<corpus::EsciLabel>& allowed_labels) {
  BipartiteGraph graph;
  for (const auto& j : judgments) {
    if (!allowed_labels.count(j.label)) continue;
    graph.query_to_products[j.query_id].insert(j.product_id);
    graph.product_to_queries[j.product_id].insert(j.query_id);
  }
  return graph;
}

std::vector<QueryPair> mine_candidates(const BipartiteGraph& graph, int k_shared) {
  if (k_shared < 1) throw std::invalid_argument("mine_candidates: k_shared must be >= 1");

  // Counting through the product side keeps this near-linear in the number of
  // (product, query-pair) incidences instead of a dense |Q|^2 sweep.
  std::map<std::pair<std::string, std::string>, std::set<std::string>> shared;
  for (const auto& [product, queries] : graph.product_to_queries) {
    if (queries.size() < 2) continue;
    for (auto a = queries.begin(); a != queries.end(); ++a) {
      for (auto b = std::next(a); b != queries.end(); ++b) {
        shared[{*a, *b}].insert(product);
      }
    }
  }

  std::vector<QueryPair> out;
  for (auto& [key, products] : shared) {
    if (static_cast<int>(products.size()) < k_shared) continue;
    QueryPair pair;
    pair.source = key.first;
    pair.target = key.second;
    pair.shared_products = std::move(products);
    pair.verdict = Verdict::unfiltered;
    out.push_back(std::move(pair));
  }
  // std::map iteration already yields (source, target)-sorted pairs.
  return out;
}

double LexicalFilter::jaccard(std::span<const std::string> a, std::span<const std::string> b) {
  std::set<std::string> sa(a.begin(), a.end());
  std::set<std::string> sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 0.0;
  size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

bool LexicalFilter::equivalent(const corpus::QueryRecord& a, const corpus::QueryRecord& b) {
  return jaccard(a.tokens, b.tokens) >= threshold_;
}

std::string render_equivalence_prompt(const std::string& query_a, const std::string& query_b) {
  return "Do these two shopping queries express the same product intent? Answer yes or no.\n"
         "Query A: " + query_a + "\n" +
         "Query B: " + query_b + "\n";
}

bool JudgeFilter::equivalent(const corpus::QueryRecord& a, const corpus::QueryRecord& b) {
  const std::string prompt = render_equivalence_prompt(a.text, b.text);
  std::string last_error = "no attempts made";
  for (int attempt = 0; attempt < retry_budget_; ++attempt) {
    std::string reply;
    try {
      reply = completer_(prompt);
    } catch (const std::exception& e) {
      last_error = e.what();
      continue;
    }
    // First alphabetic token, lowercased.
    std::string token;
    for (char c : reply) {
      if (std::isalpha(static_cast<unsigned char>(c))) {
        token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      } else if (!token.empty()) {
        break;
      }
    }
    if (token == "yes") return true;
    if (token == "no") return false;
    last_error = "unparseable reply '" + reply + "'";
  }
  throw DependencyError("equivalence filter failed for pair ('" + a.text + "', '" + b.text +
                        "') after " + std::to_string(retry_budget_) + " attempts: " + last_error);
}

FilterOutcome filter_pairs(std::vector<QueryPair> pairs, const corpus::QuerySet& queries,
                           EquivalenceFilter& filter) {
  FilterOutcome outcome;
  for (auto& pair : pairs) {
    const auto* a = queries.find(pair.source);
    const auto* b = queries.find(pair.target);
    if (!a || !b) throw DataError("filter_pairs: pair references unknown query id");
    if (filter.equivalent(*a, *b)) {
      pair.verdict = Verdict::accepted;
      outcome.accepted.push_back(std::move(pair));
    } else {
      pair.verdict = Verdict::rejected;
      ++outcome.rejected;
    }
  }
  return outcome;
}

Q2QDataset symmetrize_and_split(std::span<const QueryPair> accepted,
                                const corpus::QuerySet& queries, double eval_fraction,
                                uint64_t seed) {
  if (eval_fraction <= 0.0 || eval_fraction >= 1.0) {
    throw std::invalid_argument("symmetrize_and_split: eval_fraction must lie in (0, 1)");
  }
  if (accepted.size() < 2) {
    throw DataError("symmetrize_and_split: need at least 2 accepted pairs, got " +
                    std::to_string(accepted.size()));
  }

  std::vector<size_t> order(accepted.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const auto eval_count = static_cast<size_t>(
      std::llround(eval_fraction * static_cast<double>(accepted.size())));

  Q2QDataset dataset;
  dataset.accepted_count = accepted.size();
  auto emit = [&](const QueryPair& pair, corpus::Split split) {
    const auto* a = queries.find(pair.source);
    const auto* b = queries.find(pair.target);
    if (!a || !b) throw DataError("symmetrize_and_split: pair references unknown query id");
    auto& bucket = split == corpus::Split::train ? dataset.train : dataset.eval;
    const int count = static_cast<int>(pair.shared_products.size());
    bucket.push_back(DirectedPair{a->text, b->text, count, split});
    bucket.push_back(DirectedPair{b->text, a->text, count, split});
  };
  for (size_t i = 0; i < order.size(); ++i) {
    emit(accepted[order[i]], i < eval_count ? corpus::Split::test : corpus::Split::train);
  }
  return dataset;
}

void write_q2q_file(const Q2QDataset& dataset, const std::string& path, uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write Q2Q file: " + path);
  json header{{"type", "header"}, {"seed", seed}};
  out << header.dump() << "\n";
  auto emit = [&](const DirectedPair& p, const char* split) {
    json j{{"source_text", p.source_text},
           {"target_text", p.target_text},
           {"shared_product_count", p.shared_product_count},
           {"verdict", "accepted"},
           {"split", split}};
    out << j.dump() << "\n";
  };
  for (const auto& p : dataset.train) emit(p, "train");
  for (const auto& p : dataset.eval) emit(p, "eval");
  if (!out) throw DataError("failed while writing Q2Q file: " + path);
}

Q2QDataset read_q2q_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open Q2Q file: " + path);
  Q2QDataset dataset;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("malformed Q2Q record at " + path + ":" + std::to_string(line_no) + ": " +
                      e.what());
    }
    if (j.value("type", "") == "header") continue;
    DirectedPair p;
    p.source_text = j.at("source_text").get<std::string>();
    p.target_text = j.at("target_text").get<std::string>();
    p.shared_product_count = j.value("shared_product_count", 0);
    const std::string split = j.at("split").get<std::string>();
    if (split == "train") {
      p.split = corpus::Split::train;
      dataset.train.push_back(std::move(p));
    } else if (split == "eval") {
      p.split = corpus::Split::test;
      dataset.eval.push_back(std::move(p));
    } else {
      throw DataError("unknown split '" + split + "' at " + path + ":" + std::to_string(line_no));
    }
  }
  dataset.accepted_count = (dataset.train.size() + dataset.eval.size()) / 2;
  return dataset;
}

}  // namespace minielm::q2q
