#include "minielm/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "minielm/common.hpp"

namespace minielm::search {

std::vector<std::string> RetrievalResult::ids() const {
  std::vector<std::string> out;
  out.reserve(products.size());
  for (const auto& p : products) out.push_back(p.product_id);
  return out;
}

const std::vector<Posting>* SearchIndex::postings_for(const std::string& token) const {
  auto it = postings_.find(token);
  return it == postings_.end() ? nullptr : &it->second;
}

double SearchIndex::doc_length(const std::string& product_id) const {
  auto it = doc_lengths_.find(product_id);
  return it == doc_lengths_.end() ? 0.0 : it->second;
}

double bm25_score(double tf, double df, double doc_len, double avg_len,
                  double n_docs, double k1, double b) {
  if (tf < 0 || df < 0 || doc_len < 0) throw std::invalid_argument("bm25_score: negative count");
  if (df > n_docs) throw std::invalid_argument("bm25_score: df exceeds n_docs");
  if (avg_len <= 0) throw std::invalid_argument("bm25_score: avg_len must be positive");
  if (tf == 0.0) return 0.0;
  const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
  const double denom = tf + k1 * (1.0 - b + b * doc_len / avg_len);
  return idf * tf * (k1 + 1.0) / denom;
}

SearchIndex build_index(const corpus::Catalog& catalog,
                        const std::map<std::string, int>& field_weights,
                        double k1, double b) {
  if (catalog.size() == 0) throw DataError("cannot build a search index from an empty catalog");
  if (k1 <= 0.0) throw std::invalid_argument("build_index: k1 must be positive");
  if (b < 0.0 || b > 1.0) throw std::invalid_argument("build_index: b must lie in [0, 1]");

  SearchIndex index;
  index.k1_ = k1;
  index.b_ = b;

  double total_length = 0.0;
  for (const auto& product : catalog.products) {
    std::map<std::string, double> tf;
    double length = 0.0;
    for (const auto& [field, weight] : field_weights) {
      if (weight <= 0) continue;
      const std::string* text = nullptr;
      if (field == "title") text = &product.title;
      else if (field == "description") text = &product.description;
      else if (field == "brand") text = &product.brand;
      else throw std::invalid_argument("build_index: unknown field '" + field + "'");
      if (text->empty()) continue;
      auto tokens = corpus::tokenize(*text);
      for (const auto& token : tokens) tf[token] += weight;
      length += static_cast<double>(tokens.size()) * weight;
    }
    index.doc_lengths_.emplace(product.product_id, length);
    total_length += length;
    for (const auto& [token, count] : tf) {
      index.postings_[token].push_back(Posting{product.product_id, count});
    }
  }
  index.avg_doc_length_ = total_length / static_cast<double>(catalog.size());
  for (auto& [token, postings] : index.postings_) {
    std::sort(postings.begin(), postings.end(),
              [](const Posting& a, const Posting& b) { return a.product_id < b.product_id; });
  }
  return index;
}

RetrievalResult SearchIndex::retrieve(const std::string& query, int top_k) const {
  if (top_k < 1) throw std::invalid_argument("retrieve: top_k must be >= 1");
  RetrievalResult result;
  result.query = query;

  // Accumulate per-document scores in query-token order so floating-point
  // addition order is fixed regardless of container iteration order.
  std::map<std::string, double> scores;
  const double n_docs = static_cast<double>(doc_count());
  for (const auto& token : corpus::tokenize(query)) {
    const auto* postings = postings_for(token);
    if (!postings) continue;
    const double df = static_cast<double>(postings->size());
    for (const auto& posting : *postings) {
      scores[posting.product_id] += bm25_score(posting.term_frequency, df,
                                               doc_length(posting.product_id),
                                               avg_doc_length_, n_docs, k1_, b_);
    }
  }

  std::vector<ScoredProduct> ranked;
  ranked.reserve(scores.size());
  for (const auto& [id, score] : scores) {
    if (score > 0.0) ranked.push_back(ScoredProduct{id, score});
  }
  std::sort(ranked.begin(), ranked.end(), [](const ScoredProduct& a, const ScoredProduct& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.product_id < b.product_id;
  });
  if (ranked.size() > static_cast<size_t>(top_k)) ranked.resize(static_cast<size_t>(top_k));
  result.products = std::move(ranked);
  return result;
}

namespace {

constexpr char kIndexMagic[8] = {'M', 'E', 'L', 'M', 'I', 'D', 'X', '\0'};
constexpr uint32_t kIndexVersion = 1;

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_str(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
double read_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::string read_str(std::istream& in) {
  uint64_t n = read_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

}  // namespace

void SearchIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write index file: " + path);
  out.write(kIndexMagic, sizeof kIndexMagic);
  write_u32(out, kIndexVersion);
  write_f64(out, k1_);
  write_f64(out, b_);
  write_f64(out, avg_doc_length_);
  write_u64(out, doc_lengths_.size());
  for (const auto& [id, length] : doc_lengths_) {
    write_str(out, id);
    write_f64(out, length);
  }
  write_u64(out, postings_.size());
  for (const auto& [token, postings] : postings_) {
    write_str(out, token);
    write_u64(out, postings.size());
    for (const auto& posting : postings) {
      write_str(out, posting.product_id);
      write_f64(out, posting.term_frequency);
    }
  }
  if (!out) throw DataError("failed while writing index file: " + path);
}

SearchIndex SearchIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open index file: " + path);
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kIndexMagic, sizeof magic) != 0) {
    throw DataError("not a search index file: " + path);
  }
  const uint32_t version = read_u32(in);
  if (version != kIndexVersion) {
    throw DataError("index file " + path + " has format version " + std::to_string(version) +
                    ", expected " + std::to_string(kIndexVersion));
  }
  SearchIndex index;
  index.k1_ = read_f64(in);
  index.b_ = read_f64(in);
  index.avg_doc_length_ = read_f64(in);
  const uint64_t n_docs = read_u64(in);
  for (uint64_t i = 0; i < n_docs; ++i) {
    std::string id = read_str(in);
    double length = read_f64(in);
    index.doc_lengths_.emplace(std::move(id), length);
  }
  const uint64_t n_tokens = read_u64(in);
  for (uint64_t i = 0; i < n_tokens; ++i) {
    std::string token = read_str(in);
    const uint64_t n_postings = read_u64(in);
    auto& postings = index.postings_[std::move(token)];
    postings.reserve(n_postings);
    for (uint64_t p = 0; p < n_postings; ++p) {
      std::string id = read_str(in);
      double tf = read_f64(in);
      postings.push_back(Posting{std::move(id), tf});
    }
  }
  if (!in) throw DataError("truncated index file: " + path);
  return index;
}

}  // namespace minielm::search
