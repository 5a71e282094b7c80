#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace minielm::corpus {

struct ProductRecord {
  std::string product_id;
  std::string title;
  std::string description;
  std::string brand;
  std::map<std::string, std::string> attributes;
};

struct QueryRecord {
  std::string query_id;
  std::string text;
  std::vector<std::string> tokens;  // always tokenize(text)
};

enum class EsciLabel : uint8_t { E, S, C, I };
enum class Split : uint8_t { train, test };

struct RelevanceJudgment {
  std::string query_id;
  std::string product_id;
  EsciLabel label;
  Split split;

  auto operator<=>(const RelevanceJudgment&) const = default;
};

EsciLabel parse_label(const std::string& s);   // throws DataError on unknown letter
char label_letter(EsciLabel label);
Split parse_split(const std::string& s);
const char* split_name(Split split);

// Lowercases ASCII letters and splits on maximal runs of non-alphanumeric
// bytes. Bytes >= 0x80 (UTF-8 continuations and multibyte starts) are kept
// inside tokens so multibyte characters are never split apart.
std::vector<std::string> tokenize(const std::string& text);

std::string join_tokens(std::span<const std::string> tokens);

struct Catalog {
  std::vector<ProductRecord> products;
  std::unordered_map<std::string, size_t> by_id;

  const ProductRecord* find(const std::string& product_id) const;
  bool contains(const std::string& product_id) const { return by_id.count(product_id) > 0; }
  size_t size() const { return products.size(); }
};

struct QuerySet {
  std::vector<QueryRecord> queries;
  std::unordered_map<std::string, size_t> by_id;

  const QueryRecord* find(const std::string& query_id) const;
  bool contains(const std::string& query_id) const { return by_id.count(query_id) > 0; }
  size_t size() const { return queries.size(); }
};

// Products file: one JSON object per line with product_id, title and optional
// description / brand / attributes. Malformed lines report their line number;
// duplicate ids are an error.
Catalog load_products(const std::string& path);

// Extracts the unique (query_id, query_text) columns of a judgments file.
// Conflicting texts for one query_id are an error.
QuerySet load_queries(const std::string& path);

struct JudgmentLoad {
  std::vector<RelevanceJudgment> judgments;
  size_t skipped_unknown_query = 0;
  size_t skipped_unknown_product = 0;
};

// Judgments file: tab-separated query_id, query_text, product_id, esci_label,
// split with a header row. Rows referencing ids absent from the given catalog
// or query set are skipped and counted; unknown labels are an error.
JudgmentLoad load_judgments(const std::string& path, const Catalog& catalog,
                            const QuerySet& queries);

class Vocabulary {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kBos = 1;
  static constexpr int32_t kEos = 2;
  static constexpr int32_t kUnk = 3;
  static constexpr int32_t kNumSpecial = 4;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> content_tokens, int32_t min_frequency);

  int32_t encode(const std::string& token) const;          // UNK for unknown tokens
  const std::string& decode(int32_t id) const;             // throws on invalid id
  std::vector<int32_t> encode_text(const std::string& text) const;
  std::string decode_to_text(std::span<const int32_t> ids, bool skip_special = true) const;

  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
  int32_t size() const { return static_cast<int32_t>(id_to_token_.size()); }
  int32_t min_frequency() const { return min_frequency_; }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  // FNV-1a over the id-ordered token list; checkpoints refuse to load when
  // this differs from the vocabulary they were trained with.
  uint64_t hash() const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int32_t> token_to_id_;
  int32_t min_frequency_ = 1;
};

// Content tokens are every query token with corpus frequency >= min_frequency,
// id-ordered by descending frequency then lexicographically.
Vocabulary build_vocabulary(const QuerySet& queries, int32_t min_frequency);

}  // namespace minielm::corpus
