#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "minielm/corpus.hpp"
#include "minielm/search.hpp"

namespace minielm::feedback {

// Every field is drawn from a small enumerated domain; the pool sampler and
// the bio renderer agree on these lists.
struct UserProfile {
  std::string gender;
  std::string age_band;
  std::string location;
  std::string income_tier;
  std::string price_sensitivity;
  std::string brand_affinity;
  std::string style;
  std::string material_preference;
};

struct ProfileDomains {
  std::vector<std::string> gender;
  std::vector<std::string> age_band;
  std::vector<std::string> location;
  std::vector<std::string> income_tier;
  std::vector<std::string> price_sensitivity;
  std::vector<std::string> brand_affinity;
  std::vector<std::string> style;
  std::vector<std::string> material_preference;
};

const ProfileDomains& profile_domains();
bool profile_valid(const UserProfile& profile);

std::vector<UserProfile> build_profile_pool(int size, uint64_t seed);
void save_profile_pool(const std::vector<UserProfile>& pool, const std::string& path);
std::vector<UserProfile> load_profile_pool(const std::string& path);

// Single-line bio used for the {simu_bio} slot.
std::string render_profile(const UserProfile& profile);

// The fixed instruction asking a text-generation service to choose a bio.
std::string profile_synthesis_prompt();

enum class InteractionKind : uint8_t { click, add_to_cart, purchase };
const char* interaction_name(InteractionKind kind);

// The per-interaction judge prompt. {simu_bio} gets the rendered profile,
// {prompt} the original query, {list_prompt} the numbered product titles, and
// the question verb follows the interaction kind. Empty product lists and
// unknown product ids are errors.
std::string render_interaction_prompt(InteractionKind kind, const UserProfile& profile,
                                      const std::string& original_query,
                                      const search::RetrievalResult& products,
                                      const corpus::Catalog& catalog);

// First integer in the reply, clamped into [0, max_count]. No integer at all
// is a parse error.
int parse_count(const std::string& raw, int max_count);

struct JudgeRequest {
  std::string prompt;
  int max_tokens = 8;
  double temperature = 0.0;
  std::optional<uint64_t> seed;
};

struct JudgeResponse {
  std::string text;
  double latency_ms = 0.0;
};

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual JudgeResponse complete(const JudgeRequest& request) = 0;
};

// Deterministic stand-in for the judge service: parses the rendered prompt,
// scores lexical alignment between the original query and the listed titles,
// and replies with a bare integer. Noise is at most +/-1 and identical across
// the three interaction kinds of one list, so click >= add-to-cart >= purchase
// always holds.
class MockJudge : public JudgeClient {
 public:
  explicit MockJudge(uint64_t seed = 0) : seed_(seed) {}
  JudgeResponse complete(const JudgeRequest& request) override;

 private:
  uint64_t seed_;
};

struct HttpClientConfig {
  std::string url;        // e.g. http://127.0.0.1:8080/v1/complete
  std::string api_key;    // optional bearer token
  int timeout_ms = 10000;
  int retries = 3;
};

// POSTs {prompt, max_tokens, temperature, seed?} and expects {text}. Retries
// transport failures up to the configured budget, then raises DependencyError.
class HttpJudgeClient : public JudgeClient {
 public:
  explicit HttpJudgeClient(HttpClientConfig config);
  JudgeResponse complete(const JudgeRequest& request) override;

 private:
  HttpClientConfig config_;
  std::string host_;
  int port_ = 80;
  std::string path_;
};

struct EngagementScores {
  double click = 0.0;
  double add_to_cart = 0.0;
  double purchase = 0.0;
};

// Three independent judge calls (one per interaction kind); each score is the
// parsed count normalized by the list size. An empty product list yields
// (0,0,0) without touching the judge. Parse failures are retried with fresh
// seeds up to `attempts` total calls per kind.
EngagementScores engagement_scores(JudgeClient& judge, const UserProfile& profile,
                                   const std::string& original_query,
                                   const search::RetrievalResult& products,
                                   const corpus::Catalog& catalog,
                                   double temperature = 0.0,
                                   std::optional<uint64_t> seed = std::nullopt,
                                   int attempts = 3);

}  // namespace minielm::feedback
