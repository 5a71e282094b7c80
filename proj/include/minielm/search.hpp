#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "minielm/corpus.hpp"

namespace minielm::search {

struct Posting {
  std::string product_id;
  double term_frequency = 0.0;  // field-weighted
};

struct ScoredProduct {
  std::string product_id;
  double score = 0.0;
};

struct RetrievalResult {
  std::string query;
  std::vector<ScoredProduct> products;  // non-increasing score, ties by ascending id

  std::vector<std::string> ids() const;
  bool empty() const { return products.empty(); }
  size_t size() const { return products.size(); }
};

// Write-once inverted index over the product catalog; a deterministic
// in-process stand-in for the production search engine.
class SearchIndex {
 public:
  SearchIndex() = default;

  double k1() const { return k1_; }
  double b() const { return b_; }
  size_t doc_count() const { return doc_lengths_.size(); }
  double avg_doc_length() const { return avg_doc_length_; }
  size_t vocabulary_size() const { return postings_.size(); }

  const std::vector<Posting>* postings_for(const std::string& token) const;
  double doc_length(const std::string& product_id) const;

  RetrievalResult retrieve(const std::string& query, int top_k) const;

  void save(const std::string& path) const;
  static SearchIndex load(const std::string& path);

  friend SearchIndex build_index(const corpus::Catalog& catalog,
                                 const std::map<std::string, int>& field_weights,
                                 double k1, double b);

 private:
  std::map<std::string, std::vector<Posting>> postings_;  // token -> postings by ascending id
  std::map<std::string, double> doc_lengths_;
  double avg_doc_length_ = 0.0;
  double k1_ = 1.2;
  double b_ = 0.75;
};

inline const std::map<std::string, int>& default_field_weights() {
  static const std::map<std::string, int> weights{{"title", 1}, {"description", 1}};
  return weights;
}

// Indexes each product over the concatenation of its weighted fields (a weight
// of w appends the field's tokens w times). Empty catalog is an error.
SearchIndex build_index(const corpus::Catalog& catalog,
                        const std::map<std::string, int>& field_weights = default_field_weights(),
                        double k1 = 1.2, double b = 0.75);

// Okapi BM25 with idf = ln(1 + (n_docs - df + 0.5) / (df + 0.5)).
double bm25_score(double tf, double df, double doc_len, double avg_len,
                  double n_docs, double k1, double b);

}  // namespace minielm::search
