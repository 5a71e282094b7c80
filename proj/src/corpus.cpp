#include "minielm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "minielm/common.hpp"
#include "minielm/rng.hpp"

namespace minielm::corpus {

using nlohmann::json;

EsciLabel parse_label(const std::string& s) {
  if (s == "E") return EsciLabel::E;
  if (s == "S") return EsciLabel::S;
  if (s == "C") return EsciLabel::C;
  if (s == "I") return EsciLabel::I;
  throw DataError("unknown ESCI label '" + s + "' (expected one of E, S, C, I)");
}

char label_letter(EsciLabel label) {
  switch (label) {
    case EsciLabel::E: return 'E';
    case EsciLabel::S: return 'S';
    case EsciLabel::C: return 'C';
    case EsciLabel::I: return 'I';
  }
  return '?';
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "' (expected train or test)");
}

const char* split_name(Split split) {
  return split == Split::train ? "train" : "test";
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    const bool keep = std::isalnum(c) != 0 || c >= 0x80;
    if (keep) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

const ProductRecord* Catalog::find(const std::string& product_id) const {
  auto it = by_id.find(product_id);
  return it == by_id.end() ? nullptr : &products[it->second];
}

const QueryRecord* QuerySet::find(const std::string& query_id) const {
  auto it = by_id.find(query_id);
  return it == by_id.end() ? nullptr : &queries[it->second];
}

Catalog load_products(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open products file: " + path);
  Catalog catalog;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("malformed product record at " + path + ":" +
                      std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("product_id") || !j.contains("title")) {
      throw DataError("product record at " + path + ":" + std::to_string(line_no) +
                      " must be an object with product_id and title");
    }
    ProductRecord rec;
    rec.product_id = j.at("product_id").get<std::string>();
    rec.title = j.at("title").get<std::string>();
    rec.description = j.value("description", "");
    rec.brand = j.value("brand", "");
    if (j.contains("attributes")) {
      for (auto& [key, value] : j.at("attributes").items()) {
        rec.attributes[key] = value.get<std::string>();
      }
    }
    if (rec.product_id.empty()) {
      throw DataError("empty product_id at " + path + ":" + std::to_string(line_no));
    }
    if (catalog.contains(rec.product_id)) {
      throw DataError("duplicate product_id '" + rec.product_id + "' in " + path);
    }
    catalog.by_id.emplace(rec.product_id, catalog.products.size());
    catalog.products.push_back(std::move(rec));
  }
  return catalog;
}

namespace {

std::vector<std::string> split_tsv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, '\t')) fields.push_back(field);
  if (!line.empty() && line.back() == '\t') fields.emplace_back();
  return fields;
}

constexpr const char* kJudgmentHeader = "query_id\tquery_text\tproduct_id\tesci_label\tsplit";

std::ifstream open_judgments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open judgments file: " + path);
  std::string header;
  if (!std::getline(in, header)) {
    // Empty file: treat as header-only, no rows.
    return in;
  }
  if (header != kJudgmentHeader) {
    throw DataError("judgments file " + path + " must start with header '" +
                    std::string(kJudgmentHeader) + "'");
  }
  return in;
}

}  // namespace

QuerySet load_queries(const std::string& path) {
  std::ifstream in = open_judgments(path);
  QuerySet set;
  std::string line;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tsv(line);
    if (fields.size() != 5) {
      throw DataError("judgments row at " + path + ":" + std::to_string(line_no) +
                      " has " + std::to_string(fields.size()) + " fields, expected 5");
    }
    const std::string& query_id = fields[0];
    const std::string& text = fields[1];
    if (query_id.empty()) {
      throw DataError("empty query_id at " + path + ":" + std::to_string(line_no));
    }
    if (auto* existing = set.find(query_id)) {
      if (existing->text != text) {
        throw DataError("query_id '" + query_id + "' has conflicting texts in " + path);
      }
      continue;
    }
    QueryRecord rec;
    rec.query_id = query_id;
    rec.text = text;
    rec.tokens = tokenize(text);
    set.by_id.emplace(rec.query_id, set.queries.size());
    set.queries.push_back(std::move(rec));
  }
  return set;
}

JudgmentLoad load_judgments(const std::string& path, const Catalog& catalog,
                            const QuerySet& queries) {
  std::ifstream in = open_judgments(path);
  JudgmentLoad out;
  std::set<RelevanceJudgment> seen;
  std::string line;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tsv(line);
    if (fields.size() != 5) {
      throw DataError("judgments row at " + path + ":" + std::to_string(line_no) +
                      " has " + std::to_string(fields.size()) + " fields, expected 5");
    }
    RelevanceJudgment j;
    j.query_id = fields[0];
    j.product_id = fields[2];
    j.label = parse_label(fields[3]);
    j.split = parse_split(fields[4]);
    if (!queries.contains(j.query_id)) {
      ++out.skipped_unknown_query;
      continue;
    }
    if (!catalog.contains(j.product_id)) {
      ++out.skipped_unknown_product;
      continue;
    }
    if (seen.insert(j).second) out.judgments.push_back(std::move(j));
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> content_tokens, int32_t min_frequency)
    : min_frequency_(min_frequency) {
  id_to_token_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (auto& t : content_tokens) id_to_token_.push_back(std::move(t));
  for (size_t i = 0; i < id_to_token_.size(); ++i) {
    token_to_id_.emplace(id_to_token_[i], static_cast<int32_t>(i));
  }
}

int32_t Vocabulary::encode(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::decode(int32_t id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                            std::to_string(size()));
  }
  return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int32_t> Vocabulary::encode_text(const std::string& text) const {
  std::vector<int32_t> ids;
  for (const auto& token : tokenize(text)) ids.push_back(encode(token));
  return ids;
}

std::string Vocabulary::decode_to_text(std::span<const int32_t> ids, bool skip_special) const {
  std::string out;
  for (int32_t id : ids) {
    if (skip_special && id < kNumSpecial) continue;
    if (!out.empty()) out.push_back(' ');
    out += decode(id);
  }
  return out;
}

uint64_t Vocabulary::hash() const {
  uint64_t h = 14695981039346656037ull;
  for (const auto& token : id_to_token_) {
    h = fnv1a64(token, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

Vocabulary build_vocabulary(const QuerySet& queries, int32_t min_frequency) {
  if (min_frequency < 1) throw std::invalid_argument("min_frequency must be >= 1");
  std::map<std::string, int64_t> freq;
  for (const auto& q : queries.queries) {
    for (const auto& t : q.tokens) ++freq[t];
  }
  std::vector<std::pair<std::string, int64_t>> kept;
  for (auto& [token, count] : freq) {
    if (count >= min_frequency) kept.emplace_back(token, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> content;
  content.reserve(kept.size());
  for (auto& [token, count] : kept) content.push_back(token);
  return Vocabulary(std::move(content), min_frequency);
}

}  // namespace minielm::corpus
