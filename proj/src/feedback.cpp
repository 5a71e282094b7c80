#include "minielm/feedback.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "httplib.h"

#include "minielm/common.hpp"
#include "minielm/rng.hpp"

namespace minielm::feedback {

using nlohmann::json;

const ProfileDomains& profile_domains() {
  static const ProfileDomains domains{
      {"female", "male", "nonbinary"},
      {"18-25", "26-35", "36-50"},
      {"North America", "Europe", "Asia"},
      {"low", "middle", "high", "luxury"},
      {"low", "medium", "high"},
      {"low", "medium", "high"},
      {"casual", "business", "luxury", "trendy", "minimalist", "classic"},
      {"no preference", "eco-friendly", "cotton", "leather", "wood", "synthetic"},
  };
  return domains;
}

namespace {

bool in_domain(const std::vector<std::string>& domain, const std::string& value) {
  return std::find(domain.begin(), domain.end(), value) != domain.end();
}

}  // namespace

bool profile_valid(const UserProfile& p) {
  const auto& d = profile_domains();
  return in_domain(d.gender, p.gender) && in_domain(d.age_band, p.age_band) &&
         in_domain(d.location, p.location) && in_domain(d.income_tier, p.income_tier) &&
         in_domain(d.price_sensitivity, p.price_sensitivity) &&
         in_domain(d.brand_affinity, p.brand_affinity) && in_domain(d.style, p.style) &&
         in_domain(d.material_preference, p.material_preference);
}

std::vector<UserProfile> build_profile_pool(int size, uint64_t seed) {
  if (size < 1) throw std::invalid_argument("build_profile_pool: size must be >= 1");
  const auto& d = profile_domains();
  Rng rng(seed);
  auto pick = [&rng](const std::vector<std::string>& domain) {
    return domain[rng.index(domain.size())];
  };
  std::vector<UserProfile> pool;
  pool.reserve(static_cast<size_t>(size));
  for (int i = 0; i < size; ++i) {
    UserProfile p;
    p.gender = pick(d.gender);
    p.age_band = pick(d.age_band);
    p.location = pick(d.location);
    p.income_tier = pick(d.income_tier);
    p.price_sensitivity = pick(d.price_sensitivity);
    p.brand_affinity = pick(d.brand_affinity);
    p.style = pick(d.style);
    p.material_preference = pick(d.material_preference);
    pool.push_back(std::move(p));
  }
  return pool;
}

void save_profile_pool(const std::vector<UserProfile>& pool, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write profile pool: " + path);
  for (const auto& p : pool) {
    json j{{"gender", p.gender},
           {"age_band", p.age_band},
           {"location", p.location},
           {"income_tier", p.income_tier},
           {"price_sensitivity", p.price_sensitivity},
           {"brand_affinity", p.brand_affinity},
           {"style", p.style},
           {"material_preference", p.material_preference}};
    out << j.dump() << "\n";
  }
}

std::vector<UserProfile> load_profile_pool(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open profile pool: " + path);
  std::vector<UserProfile> pool;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("malformed profile at " + path + ":" + std::to_string(line_no) + ": " +
                      e.what());
    }
    UserProfile p;
    p.gender = j.at("gender").get<std::string>();
    p.age_band = j.at("age_band").get<std::string>();
    p.location = j.at("location").get<std::string>();
    p.income_tier = j.at("income_tier").get<std::string>();
    p.price_sensitivity = j.at("price_sensitivity").get<std::string>();
    p.brand_affinity = j.at("brand_affinity").get<std::string>();
    p.style = j.at("style").get<std::string>();
    p.material_preference = j.at("material_preference").get<std::string>();
    if (!profile_valid(p)) {
      throw DataError("profile at " + path + ":" + std::to_string(line_no) +
                      " has a value outside its domain");
    }
    pool.push_back(std::move(p));
  }
  return pool;
}

std::string render_profile(const UserProfile& p) {
  std::ostringstream out;
  out << "Gender: " << p.gender << ". Age: " << p.age_band << ". Location: " << p.location
      << ". Income: " << p.income_tier << ". Price Sensitivity: " << p.price_sensitivity
      << ". Brand Affinity: " << p.brand_affinity << ". Style: " << p.style
      << ". Material: " << p.material_preference << ".";
  return out.str();
}

std::string profile_synthesis_prompt() {
  return
      "Simulate the behavior of a random e-commerce user with specific demographics and "
      "preferences influencing product choices:\n"
      "Demographics:\n"
      "Gender: Affects preferences in apparel or cosmetics.\n"
      "Age: Influences style, spending, and product types (e.g., 18-25, 26-35, 36-50).\n"
      "Location: Impacts climate-related, cultural, and trending products (e.g., North America, "
      "Europe, Asia).\n"
      "Income: Determines spending power (low, middle, high, luxury).\n"
      "Preferences:\n"
      "Price Sensitivity: Willingness to pay beyond budget (low to high).\n"
      "Brand Affinity: Preference for familiar or famous brands (low to high).\n"
      "Style: Casual, business, luxury, trendy, minimalist, or classic.\n"
      "Material: Preference for specific or eco-friendly materials when relevant.\n"
      "You are now a simulated user of this ecommerce platform.\n"
      "Choose bio and preferences for the simulated user.\n";
}

const char* interaction_name(InteractionKind kind) {
  switch (kind) {
    case InteractionKind::click: return "click";
    case InteractionKind::add_to_cart: return "add_to_cart";
    case InteractionKind::purchase: return "purchase";
  }
  return "?";
}

namespace {

const char* interaction_verb(InteractionKind kind) {
  switch (kind) {
    case InteractionKind::click: return "click";
    case InteractionKind::add_to_cart: return "add to cart";
    case InteractionKind::purchase: return "purchase";
  }
  return "?";
}

constexpr const char* kQueryMarker = "using this query:";
constexpr const char* kListMarker = "The site returns a list of product:\n";
constexpr const char* kTailMarker = "\nGiven the bio and preferences for the simulated user";

}  // namespace

std::string render_interaction_prompt(InteractionKind kind, const UserProfile& profile,
                                      const std::string& original_query,
                                      const search::RetrievalResult& products,
                                      const corpus::Catalog& catalog) {
  if (products.empty()) {
    throw std::invalid_argument("render_interaction_prompt: product list must be non-empty");
  }
  std::ostringstream list_prompt;
  for (size_t i = 0; i < products.products.size(); ++i) {
    const auto& id = products.products[i].product_id;
    const auto* record = catalog.find(id);
    if (!record) throw DataError("render_interaction_prompt: unknown product id '" + id + "'");
    if (i > 0) list_prompt << "\n";
    list_prompt << (i + 1) << ". " << record->title;
  }

  std::ostringstream out;
  out << "User Profile: " << render_profile(profile) << "\n"
      << "Criteria for a good list of products: 1. A good list of products for a query is which "
         "has accurate representation of the user intent, demographics and preferences.\n"
      << "2. It should have a diverse set of products matching the query.\n"
      << "3. It should not have products too different from the query.\n"
      << "4 . The main product requested (Eg. toys for kids - toys is the main product) must be "
         "given importance, not the additional clause. The additional clause must be used as a "
         "qualifier.\n"
      << "You are now a simulated user of this ecommerce platform and want to search products "
         "using this query:"
      << original_query << ".\n"
      << "The site returns a list of product:\n"
      << list_prompt.str() << ".\n"
      << "Given the bio and preferences for the simulated user and based on the query, then "
         "answer this final question:\n"
      << "How many items from this list will you " << interaction_verb(kind)
      << "? Respond with a single number only, DO NOT provide other information.\n";
  return out.str();
}

int parse_count(const std::string& raw, int max_count) {
  if (max_count < 0) throw std::invalid_argument("parse_count: max_count must be >= 0");
  size_t i = 0;
  while (i < raw.size() && !std::isdigit(static_cast<unsigned char>(raw[i]))) ++i;
  if (i == raw.size()) {
    throw DependencyError("parse_count: no integer in judge reply '" + raw + "'");
  }
  long long value = 0;
  while (i < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i]))) {
    value = value * 10 + (raw[i] - '0');
    if (value > 1'000'000) break;  // clamp dominates anyway
    ++i;
  }
  return static_cast<int>(std::clamp<long long>(value, 0, max_count));
}

JudgeResponse MockJudge::complete(const JudgeRequest& request) {
  const std::string& prompt = request.prompt;

  const auto query_at = prompt.find(kQueryMarker);
  const auto list_at = prompt.find(kListMarker);
  const auto tail_at = prompt.find(kTailMarker);
  if (query_at == std::string::npos || list_at == std::string::npos ||
      tail_at == std::string::npos || list_at <= query_at || tail_at <= list_at) {
    throw DependencyError("mock judge: prompt does not match the interaction template");
  }

  const auto query_begin = query_at + std::string(kQueryMarker).size();
  auto query_end = prompt.find(".\n", query_begin);
  if (query_end == std::string::npos || query_end > list_at) query_end = list_at;
  const std::string query = prompt.substr(query_begin, query_end - query_begin);

  const auto list_begin = list_at + std::string(kListMarker).size();
  std::string list_block = prompt.substr(list_begin, tail_at - list_begin);
  if (!list_block.empty() && list_block.back() == '.') list_block.pop_back();

  std::vector<std::string> titles;
  {
    std::istringstream lines(list_block);
    std::string line;
    while (std::getline(lines, line)) {
      const auto dot = line.find(". ");
      titles.push_back(dot == std::string::npos ? line : line.substr(dot + 2));
    }
  }
  if (titles.empty()) throw DependencyError("mock judge: empty product list in prompt");

  double scale = 1.0;
  if (prompt.find("will you add to cart?") != std::string::npos) scale = 0.8;
  else if (prompt.find("will you purchase?") != std::string::npos) scale = 0.6;

  // Mean per-title coverage of the query's distinct tokens.
  const auto query_tokens = corpus::tokenize(query);
  const std::set<std::string> qset(query_tokens.begin(), query_tokens.end());
  double overlap = 0.0;
  if (!qset.empty()) {
    for (const auto& title : titles) {
      const auto title_tokens = corpus::tokenize(title);
      const std::set<std::string> tset(title_tokens.begin(), title_tokens.end());
      size_t hit = 0;
      for (const auto& t : qset) hit += tset.count(t);
      overlap += static_cast<double>(hit) / static_cast<double>(qset.size());
    }
    overlap /= static_cast<double>(titles.size());
  }

  // Kind-independent noise: derived from the query and list only, so the three
  // interaction counts of one list stay ordered.
  uint64_t h = fnv1a64(query);
  for (const auto& t : titles) h = fnv1a64(t, h);
  h = splitmix64(h ^ request.seed.value_or(seed_));
  const int noise = static_cast<int>(h % 3) - 1;

  const auto n = static_cast<double>(titles.size());
  const long long base = std::llround(n * overlap * scale);
  const long long count = std::clamp<long long>(base + noise, 0, static_cast<long long>(titles.size()));

  JudgeResponse response;
  response.text = std::to_string(count);
  return response;
}

HttpJudgeClient::HttpJudgeClient(HttpClientConfig config) : config_(std::move(config)) {
  std::string rest = config_.url;
  const std::string scheme = "http://";
  if (rest.rfind(scheme, 0) != 0) {
    throw ConfigError("judge url must start with http:// (got '" + config_.url + "')");
  }
  rest = rest.substr(scheme.size());
  const auto slash = rest.find('/');
  std::string authority = slash == std::string::npos ? rest : rest.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : rest.substr(slash);
  const auto colon = authority.find(':');
  if (colon == std::string::npos) {
    host_ = authority;
    port_ = 80;
  } else {
    host_ = authority.substr(0, colon);
    port_ = std::stoi(authority.substr(colon + 1));
  }
  if (host_.empty()) throw ConfigError("judge url has an empty host: '" + config_.url + "'");
}

JudgeResponse HttpJudgeClient::complete(const JudgeRequest& request) {
  json body{{"prompt", request.prompt},
            {"max_tokens", request.max_tokens},
            {"temperature", request.temperature}};
  if (request.seed) body["seed"] = *request.seed;
  const std::string payload = body.dump();

  std::string last_error = "no attempts made";
  for (int attempt = 0; attempt < std::max(config_.retries, 1); ++attempt) {
    httplib::Client client(host_, port_);
    client.set_connection_timeout(0, config_.timeout_ms * 1000);
    client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    const auto start = std::chrono::steady_clock::now();
    auto result = client.Post(path_, headers, payload, "application/json");
    const auto elapsed = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - start)
                             .count();
    if (!result) {
      last_error = "transport error: " + httplib::to_string(result.error());
      continue;
    }
    if (result->status != 200) {
      last_error = "HTTP status " + std::to_string(result->status);
      continue;
    }
    try {
      auto j = json::parse(result->body);
      JudgeResponse response;
      response.text = j.at("text").get<std::string>();
      response.latency_ms = elapsed;
      return response;
    } catch (const json::exception& e) {
      last_error = std::string("malformed response body: ") + e.what();
    }
  }
  throw DependencyError("judge endpoint " + config_.url + " failed after " +
                        std::to_string(std::max(config_.retries, 1)) + " attempts: " + last_error);
}

EngagementScores engagement_scores(JudgeClient& judge, const UserProfile& profile,
                                   const std::string& original_query,
                                   const search::RetrievalResult& products,
                                   const corpus::Catalog& catalog, double temperature,
                                   std::optional<uint64_t> seed, int attempts) {
  EngagementScores scores;
  if (products.empty()) return scores;
  const int list_size = static_cast<int>(products.size());

  auto score_kind = [&](InteractionKind kind) {
    const std::string prompt =
        render_interaction_prompt(kind, profile, original_query, products, catalog);
    std::string last_error;
    for (int attempt = 0; attempt < std::max(attempts, 1); ++attempt) {
      JudgeRequest request;
      request.prompt = prompt;
      request.temperature = temperature;
      if (seed) request.seed = derive_seed(*seed, interaction_name(kind), attempt);
      try {
        const auto response = judge.complete(request);
        return static_cast<double>(parse_count(response.text, list_size)) / list_size;
      } catch (const DependencyError& e) {
        last_error = e.what();
      }
    }
    throw DependencyError("engagement " + std::string(interaction_name(kind)) + " for query '" +
                          original_query + "' failed after " + std::to_string(attempts) +
                          " attempts: " + last_error);
  };

  scores.click = score_kind(InteractionKind::click);
  scores.add_to_cart = score_kind(InteractionKind::add_to_cart);
  scores.purchase = score_kind(InteractionKind::purchase);
  return scores;
}

}  // namespace minielm::feedback
