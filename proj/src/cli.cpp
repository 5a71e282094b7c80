#include "minielm/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "minielm/common.hpp"
#include "minielm/corpus.hpp"
#include "minielm/evalmetrics.hpp"
#include "minielm/feedback.hpp"
#include "minielm/online.hpp"
#include "minielm/q2q.hpp"
#include "minielm/rng.hpp"
#include "minielm/search.hpp"

namespace minielm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void parse_endpoint(const json& j, EndpointConfig& endpoint) {
  endpoint.url = get_or<std::string>(j, "url", endpoint.url);
  endpoint.api_key = get_or<std::string>(j, "api_key", endpoint.api_key);
  endpoint.timeout_ms = get_or<int>(j, "timeout_ms", endpoint.timeout_ms);
  endpoint.retries = get_or<int>(j, "retries", endpoint.retries);
  endpoint.max_tokens = get_or<int>(j, "max_tokens", endpoint.max_tokens);
  endpoint.temperature = get_or<double>(j, "temperature", endpoint.temperature);
}

void parse_preset(const json& j, PolicyPreset& preset) {
  preset.context_window = get_or<int>(j, "context_window", preset.context_window);
  preset.embedding_dim = get_or<int>(j, "embedding_dim", preset.embedding_dim);
  preset.hidden_dim = get_or<int>(j, "hidden_dim", preset.hidden_dim);
  preset.max_generation_len = get_or<int>(j, "max_generation_len", preset.max_generation_len);
}

std::string env_or(const char* name, std::string fallback) {
  const char* value = std::getenv(name);
  return value ? std::string(value) : fallback;
}

}  // namespace

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }

  RunConfig config;
  config.seed = get_or<uint64_t>(j, "seed", config.seed);
  config.jobs = get_or<int>(j, "jobs", config.jobs);
  config.output_dir = get_or<std::string>(j, "output_dir", config.output_dir);

  if (j.contains("corpus")) {
    const auto& c = j.at("corpus");
    config.corpus.products_path = get_or<std::string>(c, "products", "");
    config.corpus.judgments_path = get_or<std::string>(c, "judgments", "");
    config.corpus.min_token_frequency = get_or<int>(c, "min_token_frequency", 1);
  }
  if (j.contains("q2q")) {
    const auto& q = j.at("q2q");
    config.q2q.k_shared = get_or<int>(q, "k_shared", config.q2q.k_shared);
    config.q2q.eval_fraction = get_or<double>(q, "eval_fraction", config.q2q.eval_fraction);
    config.q2q.filter = get_or<std::string>(q, "filter", config.q2q.filter);
    config.q2q.jaccard_threshold = get_or<double>(q, "jaccard_threshold", config.q2q.jaccard_threshold);
  }
  if (j.contains("search")) {
    const auto& s = j.at("search");
    config.search.top_k = get_or<int>(s, "top_k", config.search.top_k);
    config.search.k1 = get_or<double>(s, "k1", config.search.k1);
    config.search.b = get_or<double>(s, "b", config.search.b);
  }
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    if (p.contains("teacher")) parse_preset(p.at("teacher"), config.teacher);
    if (p.contains("student")) parse_preset(p.at("student"), config.student);
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    auto& tc = config.training;
    tc.learning_rate = get_or<double>(t, "learning_rate", tc.learning_rate);
    tc.batch_size = get_or<int>(t, "batch_size", tc.batch_size);
    tc.beta = get_or<double>(t, "beta", tc.beta);
    tc.offline_epochs = get_or<int>(t, "offline_epochs", tc.offline_epochs);
    tc.distill_epochs = get_or<int>(t, "distill_epochs", tc.distill_epochs);
    tc.online_iterations = get_or<int>(t, "online_iterations", tc.online_iterations);
    tc.eval_every = get_or<int>(t, "eval_every", tc.eval_every);
    tc.clip_norm = get_or<double>(t, "clip_norm", tc.clip_norm);
    tc.momentum = get_or<double>(t, "momentum", tc.momentum);
    tc.lambda_kd = get_or<double>(t, "lambda_kd", tc.lambda_kd);
    tc.sample_temperature = get_or<double>(t, "sample_temperature", tc.sample_temperature);
    tc.dpo_use_reference = get_or<bool>(t, "dpo_use_reference", tc.dpo_use_reference);
    const std::string optimizer = get_or<std::string>(t, "optimizer", "sgd");
    if (optimizer == "sgd") tc.optimizer = training::OptimizerKind::sgd;
    else if (optimizer == "adam") tc.optimizer = training::OptimizerKind::adam;
    else throw ConfigError("training.optimizer must be 'sgd' or 'adam', got '" + optimizer + "'");
  }
  if (j.contains("judge")) parse_endpoint(j.at("judge"), config.judge);
  if (j.contains("relevance")) {
    parse_endpoint(j.at("relevance"), config.relevance);
    config.relevance_scorer = get_or<std::string>(j.at("relevance"), "scorer", config.relevance_scorer);
  }
  if (j.contains("rewards") && j.at("rewards").contains("weights")) {
    const auto& w = j.at("rewards").at("weights");
    if (!w.is_array() || w.size() != 5) {
      throw ConfigError("rewards.weights must be an array of 5 numbers");
    }
    for (size_t i = 0; i < 5; ++i) config.reward_weights[i] = w.at(i).get<double>();
  }
  if (j.contains("profiles")) {
    config.profile_pool_size = get_or<int>(j.at("profiles"), "pool_size", config.profile_pool_size);
  }

  // Credentials may come from the environment; all other settings are file-only.
  config.judge.api_key = env_or("MINIELM_JUDGE_API_KEY", config.judge.api_key);
  config.relevance.api_key = env_or("MINIELM_RELEVANCE_API_KEY", config.relevance.api_key);

  config.training.seed = config.seed;
  validate_config(config);
  return config;
}

void validate_config(const RunConfig& config) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };

  if (config.corpus.products_path.empty()) fail("corpus.products is required");
  if (config.corpus.judgments_path.empty()) fail("corpus.judgments is required");
  if (!fs::exists(config.corpus.products_path)) {
    fail("corpus.products path does not exist: " + config.corpus.products_path);
  }
  if (!fs::exists(config.corpus.judgments_path)) {
    fail("corpus.judgments path does not exist: " + config.corpus.judgments_path);
  }
  if (config.corpus.min_token_frequency < 1) fail("corpus.min_token_frequency must be >= 1");
  if (config.q2q.k_shared < 1) fail("q2q.k_shared must be >= 1");
  if (config.q2q.eval_fraction <= 0.0 || config.q2q.eval_fraction >= 1.0) {
    fail("q2q.eval_fraction must lie in (0, 1)");
  }
  if (config.q2q.filter != "lexical" && config.q2q.filter != "accept_all" &&
      config.q2q.filter != "judge") {
    fail("q2q.filter must be one of lexical, accept_all, judge");
  }
  if (config.q2q.jaccard_threshold < 0.0 || config.q2q.jaccard_threshold > 1.0) {
    fail("q2q.jaccard_threshold must lie in [0, 1]");
  }
  if (config.search.top_k < 1) fail("search.top_k must be >= 1");
  if (config.search.k1 <= 0.0) fail("search.k1 must be > 0");
  if (config.search.b < 0.0 || config.search.b > 1.0) fail("search.b must lie in [0, 1]");
  for (const auto* preset : {&config.teacher, &config.student}) {
    if (preset->context_window < 1) fail("policy context_window must be >= 1");
    if (preset->embedding_dim < 1) fail("policy embedding_dim must be >= 1");
    if (preset->hidden_dim < 1) fail("policy hidden_dim must be >= 1");
    if (preset->max_generation_len < 1) fail("policy max_generation_len must be >= 1");
  }
  const auto& t = config.training;
  if (t.learning_rate <= 0.0) fail("training.learning_rate must be > 0");
  if (t.batch_size < 1) fail("training.batch_size must be >= 1");
  if (t.beta <= 0.0) fail("training.beta must be > 0");
  if (t.offline_epochs < 0) fail("training.offline_epochs must be >= 0");
  if (t.distill_epochs < 0) fail("training.distill_epochs must be >= 0");
  if (t.online_iterations < 0) fail("training.online_iterations must be >= 0");
  if (t.eval_every < 1) fail("training.eval_every must be >= 1");
  if (t.online_iterations > 0 && t.eval_every > t.online_iterations) {
    fail("training.eval_every must not exceed training.online_iterations");
  }
  if (t.lambda_kd < 0.0 || t.lambda_kd > 1.0) fail("training.lambda_kd must lie in [0, 1]");
  if (t.sample_temperature <= 0.0) fail("training.sample_temperature must be > 0");
  if (config.relevance_scorer != "lexical" && config.relevance_scorer != "external") {
    fail("relevance.scorer must be 'lexical' or 'external'");
  }
  if (config.relevance_scorer == "external" && config.relevance.url.empty()) {
    fail("relevance.url is required when relevance.scorer is 'external'");
  }
  double weight_sum = 0.0;
  for (double w : config.reward_weights) {
    if (w < 0.0) fail("rewards.weights must be non-negative");
    weight_sum += w;
  }
  if (weight_sum <= 0.0) fail("rewards.weights must not all be zero");
  if (config.profile_pool_size < 1) fail("profiles.pool_size must be >= 1");
  if (config.jobs < 1) fail("jobs must be >= 1");
}

namespace {

struct Resolved {
  uint64_t seed;
  int jobs;
};

Resolved resolve(const RunConfig& config, const CommandOptions& options) {
  return {options.seed_override.value_or(config.seed), options.jobs_override.value_or(config.jobs)};
}

struct LoadedCorpus {
  corpus::Catalog catalog;
  corpus::QuerySet queries;
  corpus::JudgmentLoad judgments;
  corpus::Vocabulary vocab;
};

LoadedCorpus load_corpus(const RunConfig& config) {
  LoadedCorpus lc;
  lc.catalog = corpus::load_products(config.corpus.products_path);
  lc.queries = corpus::load_queries(config.corpus.judgments_path);
  lc.judgments = corpus::load_judgments(config.corpus.judgments_path, lc.catalog, lc.queries);
  lc.vocab = corpus::build_vocabulary(lc.queries, config.corpus.min_token_frequency);
  return lc;
}

fs::path out_path(const RunConfig& config, const std::string& name) {
  return fs::path(config.output_dir) / name;
}

void require_absent_or_force(const std::vector<fs::path>& targets, bool force) {
  if (force) return;
  for (const auto& target : targets) {
    if (fs::exists(target)) {
      throw ConfigError("output " + target.string() + " already exists; pass --force to overwrite");
    }
  }
}

void ensure_output_dir(const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw DataError("cannot create output directory " + config.output_dir + ": " + ec.message());
}

json header_record(const std::string& command, uint64_t seed) {
  return json{{"type", "header"}, {"command", command}, {"seed", seed}};
}

// Profile pool: load when present (validated), otherwise synthesize from the
// run seed and persist.
std::vector<feedback::UserProfile> obtain_profiles(const RunConfig& config, uint64_t seed) {
  const auto path = out_path(config, "profiles.jsonl");
  if (fs::exists(path)) return feedback::load_profile_pool(path.string());
  auto pool = feedback::build_profile_pool(config.profile_pool_size, derive_seed(seed, "profiles"));
  ensure_output_dir(config);
  feedback::save_profile_pool(pool, path.string());
  return pool;
}

std::unique_ptr<feedback::JudgeClient> make_judge(const RunConfig& config,
                                                  const CommandOptions& options, uint64_t seed) {
  if (options.mock_judge) {
    return std::make_unique<feedback::MockJudge>(derive_seed(seed, "mock_judge"));
  }
  if (config.judge.url.empty()) {
    throw ConfigError("judge.url is not configured; set it or pass --mock-judge");
  }
  feedback::HttpClientConfig http;
  http.url = config.judge.url;
  http.api_key = config.judge.api_key;
  http.timeout_ms = config.judge.timeout_ms;
  http.retries = config.judge.retries;
  return std::make_unique<feedback::HttpJudgeClient>(std::move(http));
}

// External relevance scorer speaking the judge wire protocol with a
// scorer-specific prompt; replies are parsed as a number in [0, 1].
class ExternalRelevanceScorer : public rewards::RelevanceScorer {
 public:
  explicit ExternalRelevanceScorer(const EndpointConfig& endpoint)
      : client_(feedback::HttpClientConfig{endpoint.url, endpoint.api_key, endpoint.timeout_ms,
                                           endpoint.retries}),
        temperature_(endpoint.temperature) {}

  double score(const std::string& query_text, const corpus::ProductRecord& product) override {
    feedback::JudgeRequest request;
    request.prompt =
        "Rate how relevant this product is to the shopping query on a scale from 0 to 1.\n"
        "Query: " + query_text + "\n" +
        "Product: " + product.title + "\n" +
        "Respond with a single number only, DO NOT provide other information.\n";
    request.temperature = temperature_;
    const auto response = client_.complete(request);
    try {
      const double value = std::stod(response.text);
      return std::clamp(value, 0.0, 1.0);
    } catch (const std::exception&) {
      throw DependencyError("relevance scorer returned a non-numeric reply: '" + response.text + "'");
    }
  }

 private:
  feedback::HttpJudgeClient client_;
  double temperature_;
};

std::unique_ptr<rewards::RelevanceScorer> make_scorer(const RunConfig& config) {
  if (config.relevance_scorer == "external") {
    return std::make_unique<ExternalRelevanceScorer>(config.relevance);
  }
  return std::make_unique<rewards::LexicalRelevanceScorer>();
}

std::vector<corpus::QueryRecord> queries_for_split(const LoadedCorpus& lc, corpus::Split split) {
  std::set<std::string> ids;
  for (const auto& j : lc.judgments.judgments) {
    if (j.split == split) ids.insert(j.query_id);
  }
  std::vector<corpus::QueryRecord> out;
  for (const auto& q : lc.queries.queries) {
    if (ids.count(q.query_id)) out.push_back(q);
  }
  return out;
}

policy::PolicyConfig to_policy_config(const PolicyPreset& preset, policy::Role role,
                                      int vocab_size) {
  policy::PolicyConfig c;
  c.role = role;
  c.context_window = preset.context_window;
  c.embedding_dim = preset.embedding_dim;
  c.hidden_dim = preset.hidden_dim;
  c.vocab_size = vocab_size;
  c.max_generation_len = preset.max_generation_len;
  return c;
}

online::OnlineConfig to_online_config(const RunConfig& config, uint64_t seed, int jobs) {
  online::OnlineConfig oc;
  oc.iterations = config.training.online_iterations;
  oc.eval_every = config.training.eval_every;
  oc.batch_size = config.training.batch_size;
  oc.temperature = config.training.sample_temperature;
  oc.learning_rate = config.training.learning_rate;
  oc.beta = config.training.beta;
  oc.clip_norm = config.training.clip_norm;
  oc.optimizer = config.training.optimizer;
  oc.momentum = config.training.momentum;
  oc.dpo_use_reference = config.training.dpo_use_reference;
  oc.top_k = config.search.top_k;
  oc.weights = config.reward_weights;
  oc.judge_temperature = config.judge.temperature;
  oc.seed = seed;
  oc.jobs = jobs;
  return oc;
}

json reward_json(const rewards::RewardVector& r) {
  return json{{"relevance", r.relevance},
              {"diversity", r.diversity},
              {"click", r.click},
              {"add2cart", r.add2cart},
              {"purchase", r.purchase}};
}

}  // namespace

int cmd_ingest(const RunConfig& config, const CommandOptions& options, std::ostream& out) {
  const auto [seed, jobs] = resolve(config, options);
  (void)jobs;
  const auto lc = load_corpus(config);
  size_t train_judgments = 0;
  size_t test_judgments = 0;
  for (const auto& j : lc.judgments.judgments) {
    (j.split == corpus::Split::train ? train_judgments : test_judgments) += 1;
  }
  out << "seed: " << seed << "\n";
  out << "products: " << lc.catalog.size() << "\n";
  out << "queries: " << lc.queries.size() << "\n";
  out << "judgments: " << lc.judgments.judgments.size() << " (train " << train_judgments
      << ", test " << test_judgments << ")\n";
  out << "skipped: " << lc.judgments.skipped_unknown_query << " unknown-query, "
      << lc.judgments.skipped_unknown_product << " unknown-product\n";
  out << "vocabulary: " << lc.vocab.size() << " tokens (min_frequency "
      << config.corpus.min_token_frequency << ")\n";
  return kExitOk;
}

int cmd_mine(const RunConfig& config, const CommandOptions& options, std::ostream& out) {
  const auto [seed, jobs] = resolve(config, options);
  (void)jobs;
  const auto target = out_path(config, "q2q.jsonl");
  require_absent_or_force({target}, options.force);

  const auto lc = load_corpus(config);
  std::vector<corpus::RelevanceJudgment> train_judgments;
  for (const auto& j : lc.judgments.judgments) {
    if (j.split == corpus::Split::train) train_judgments.push_back(j);
  }
  const auto graph = q2q::build_graph(train_judgments);
  auto candidates = q2q::mine_candidates(graph, config.q2q.k_shared);
  const size_t candidate_count = candidates.size();

  std::unique_ptr<q2q::EquivalenceFilter> filter;
  if (config.q2q.filter == "accept_all") {
    filter = std::make_unique<q2q::AcceptAllFilter>();
  } else if (config.q2q.filter == "lexical") {
    filter = std::make_unique<q2q::LexicalFilter>(config.q2q.jaccard_threshold);
  } else {
    auto judge = std::make_shared<std::unique_ptr<feedback::JudgeClient>>(
        make_judge(config, options, seed));
    filter = std::make_unique<q2q::JudgeFilter>(
        [judge](const std::string& prompt) {
          feedback::JudgeRequest request;
          request.prompt = prompt;
          return (*judge)->complete(request).text;
        },
        config.judge.retries);
  }

  auto outcome = q2q::filter_pairs(std::move(candidates), lc.queries, *filter);
  if (outcome.accepted.empty()) {
    out << "warning: no accepted pairs (candidates " << candidate_count << ", k_shared "
        << config.q2q.k_shared << "); nothing to write\n";
    return kExitOk;
  }
  auto dataset = q2q::symmetrize_and_split(outcome.accepted, lc.queries, config.q2q.eval_fraction,
                                           derive_seed(seed, "q2q_split"));
  dataset.k_shared = config.q2q.k_shared;
  dataset.candidate_count = candidate_count;
  dataset.rejected_count = outcome.rejected;

  ensure_output_dir(config);
  q2q::write_q2q_file(dataset, target.string(), seed);
  out << "candidates: " << candidate_count << "\n";
  out << "accepted: " << dataset.accepted_count << " (filter " << config.q2q.filter << ")\n";
  out << "rejected: " << outcome.rejected << "\n";
  out << "directed train pairs: " << dataset.train.size() << "\n";
  out << "directed eval pairs: " << dataset.eval.size() << "\n";
  out << "wrote " << target.string() << "\n";
  return kExitOk;
}

int cmd_train_offline(const RunConfig& config, const CommandOptions& options, std::ostream& out,
                      bool resume) {
  const auto [seed, jobs] = resolve(config, options);
  (void)jobs;
  const auto q2q_path = out_path(config, "q2q.jsonl");
  if (!fs::exists(q2q_path)) {
    throw ConfigError("Q2Q dataset not found at " + q2q_path.string() + "; run mine first");
  }
  const auto teacher_path = out_path(config, "teacher_sft.ckpt");
  const auto student_path = out_path(config, "student_sft.ckpt");
  const auto minielm_path = out_path(config, "minielm.ckpt");
  const auto metrics_path = out_path(config, "offline_metrics.jsonl");
  if (!resume) {
    require_absent_or_force({teacher_path, student_path, minielm_path, metrics_path},
                            options.force);
  }

  const auto lc = load_corpus(config);
  const auto dataset = q2q::read_q2q_file(q2q_path.string());

  auto training_config = config.training;
  training_config.seed = seed;

  ensure_output_dir(config);
  std::ofstream metrics(metrics_path, resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw DataError("cannot write metrics log: " + metrics_path.string());
  metrics << header_record("train-offline", seed).dump() << "\n";

  // Resume path: reuse stage checkpoints already on disk.
  std::optional<policy::PolicyParameters> teacher_resume;
  std::optional<policy::PolicyParameters> student_resume;
  if (resume) {
    if (fs::exists(teacher_path)) {
      teacher_resume = policy::load_checkpoint(teacher_path.string(), lc.vocab);
      out << "resuming: teacher stage loaded from " << teacher_path.string() << "\n";
    }
    if (fs::exists(student_path)) {
      student_resume = policy::load_checkpoint(student_path.string(), lc.vocab);
      out << "resuming: student SFT stage loaded from " << student_path.string() << "\n";
    }
  }

  const auto teacher_cfg = to_policy_config(config.teacher, policy::Role::teacher, lc.vocab.size());
  const auto student_cfg = to_policy_config(config.student, policy::Role::student, lc.vocab.size());

  auto metrics_sink = [&](const std::string& stage, int step, double loss, double grad_norm,
                          double eval_xent) {
    json record{{"type", "metrics"}, {"stage", stage},     {"step", step},
                {"loss", loss},      {"grad_norm", grad_norm}, {"eval_xentropy", eval_xent}};
    metrics << record.dump() << "\n";
  };
  // Stage checkpoints land on disk as each stage finishes, so an interrupted
  // run keeps its last completed stage for --resume.
  auto stage_sink = [&](const std::string& stage, const policy::PolicyParameters& snapshot) {
    if (stage == "sft_teacher") {
      policy::save_checkpoint(snapshot, lc.vocab, seed, teacher_path.string());
    } else if (stage == "sft_student") {
      policy::save_checkpoint(snapshot, lc.vocab, seed, student_path.string());
    } else if (stage == "distill") {
      policy::save_checkpoint(snapshot, lc.vocab, seed, minielm_path.string());
    }
  };

  auto result = training::train_offline(teacher_cfg, student_cfg, dataset, training_config,
                                        lc.vocab, metrics_sink, stage_sink,
                                        teacher_resume ? &*teacher_resume : nullptr,
                                        student_resume ? &*student_resume : nullptr);

  if (teacher_resume) policy::save_checkpoint(result.teacher, lc.vocab, seed, teacher_path.string());

  const auto offline = evalmetrics::offline_eval(result.student, lc.vocab, dataset.eval);
  json summary{{"type", "summary"},
               {"exact_match", offline.exact_match},
               {"rouge_l", offline.rouge_l},
               {"xentropy", offline.xentropy},
               {"mean_length", offline.mean_length}};
  metrics << summary.dump() << "\n";

  out << "teacher checkpoint: " << teacher_path.string() << "\n";
  out << "minielm checkpoint: " << minielm_path.string() << "\n";
  out << "eval exact_match: " << offline.exact_match << "\n";
  out << "eval rouge_l: " << offline.rouge_l << "\n";
  out << "eval xentropy: " << offline.xentropy << "\n";
  out << "eval mean_length: " << offline.mean_length << "\n";
  return kExitOk;
}

int cmd_train_online(const RunConfig& config, const CommandOptions& options, std::ostream& out) {
  const auto [seed, jobs] = resolve(config, options);
  const auto minielm_path = out_path(config, "minielm.ckpt");
  if (!fs::exists(minielm_path)) {
    throw ConfigError("MiniELM checkpoint not found at " + minielm_path.string() +
                      "; run train-offline first");
  }
  const auto final_path = out_path(config, "minielm_online.ckpt");
  const auto log_path = out_path(config, "run_log.jsonl");
  require_absent_or_force({final_path, log_path}, options.force);

  const auto lc = load_corpus(config);
  auto params = policy::load_checkpoint(minielm_path.string(), lc.vocab);
  const auto index = search::build_index(lc.catalog, search::default_field_weights(),
                                         config.search.k1, config.search.b);
  auto judge = make_judge(config, options, seed);
  auto scorer = make_scorer(config);
  const auto profiles = obtain_profiles(config, seed);
  const auto train_queries = queries_for_split(lc, corpus::Split::train);
  const auto eval_queries = queries_for_split(lc, corpus::Split::test);

  online::OnlineDeps deps;
  deps.vocab = &lc.vocab;
  deps.index = &index;
  deps.judge = judge.get();
  deps.scorer = scorer.get();
  deps.catalog = &lc.catalog;
  deps.profiles = profiles;
  deps.train_queries = train_queries;
  deps.eval_queries = eval_queries;

  const auto online_config = to_online_config(config, seed, jobs);

  ensure_output_dir(config);
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw DataError("cannot write run log: " + log_path.string());
  log << header_record("train-online", seed).dump() << "\n";

  auto log_sink = [&](const online::IterationRecord& record) {
    json rewards_json = json::array();
    for (const auto& r : record.reward_vectors) rewards_json.push_back(reward_json(r));
    json j{{"type", "iteration"},
           {"iteration", record.iteration},
           {"query_ids", record.query_ids},
           {"rewrites", record.rewrites},
           {"rewards", rewards_json},
           {"ties", record.tie_count},
           {"pairs", record.pairs_used},
           {"loss", record.loss},
           {"grad_norm", record.grad_norm}};
    log << j.dump() << "\n";
  };
  auto eval_sink = [&](int iteration, const evalmetrics::EvalReport& report) {
    json j{{"type", "eval"},
           {"iteration", iteration},
           {"relevance", report.relevance},
           {"diversity", report.diversity},
           {"click", report.click},
           {"add2cart", report.add2cart},
           {"purchase", report.purchase}};
    log << j.dump() << "\n";
  };
  auto checkpoint_sink = [&](int iteration, const policy::PolicyParameters& snapshot) {
    char name[64];
    std::snprintf(name, sizeof name, "ckpt_iter_%06d.ckpt", iteration);
    policy::save_checkpoint(snapshot, lc.vocab, seed, out_path(config, name).string());
  };

  try {
    auto result = online::run_online(std::move(params), deps, online_config, log_sink, eval_sink,
                                     checkpoint_sink);
    policy::save_checkpoint(result.params, lc.vocab, seed, final_path.string());
    out << "iterations: " << result.state.iterations_completed << "\n";
    if (!result.state.chosen_aggregate.empty()) {
      const auto smoothed = online::smooth_series(result.state.chosen_aggregate, 5);
      out << "final smoothed chosen reward: " << smoothed.back() << "\n";
    }
    out << "final checkpoint: " << final_path.string() << "\n";
    return kExitOk;
  } catch (const DependencyError&) {
    // Abort with a state checkpoint so the run can be inspected.
    policy::save_checkpoint(params, lc.vocab, seed, out_path(config, "abort_state.ckpt").string());
    throw;
  }
}

int cmd_eval(const RunConfig& config, const CommandOptions& options,
             const std::string& checkpoint_path, std::ostream& out) {
  const auto [seed, jobs] = resolve(config, options);
  const auto report_path = out_path(config, "eval_report.json");
  const auto tsv_path = out_path(config, "eval_report.tsv");
  require_absent_or_force({report_path, tsv_path}, options.force);

  const auto lc = load_corpus(config);
  const auto params = policy::load_checkpoint(checkpoint_path, lc.vocab);

  evalmetrics::EvalReport report;
  const auto q2q_path = out_path(config, "q2q.jsonl");
  if (fs::exists(q2q_path)) {
    const auto dataset = q2q::read_q2q_file(q2q_path.string());
    if (!dataset.eval.empty()) {
      const auto offline = evalmetrics::offline_eval(params, lc.vocab, dataset.eval, jobs);
      report.exact_match = offline.exact_match;
      report.rouge_l = offline.rouge_l;
      report.xentropy = offline.xentropy;
      report.mean_length = offline.mean_length;
    }
  }

  const auto eval_queries = queries_for_split(lc, corpus::Split::test);
  if (!eval_queries.empty()) {
    const auto index = search::build_index(lc.catalog, search::default_field_weights(),
                                           config.search.k1, config.search.b);
    auto judge = make_judge(config, options, seed);
    auto scorer = make_scorer(config);
    const auto profiles = obtain_profiles(config, seed);
    evalmetrics::OnlineEvalConfig eval_config;
    eval_config.top_k = config.search.top_k;
    eval_config.weights = config.reward_weights;
    eval_config.seed = derive_seed(seed, "online_eval");
    eval_config.judge_temperature = config.judge.temperature;
    eval_config.jobs = jobs;
    const auto online_report = evalmetrics::online_eval(params, lc.vocab, eval_queries, index,
                                                        *judge, *scorer, profiles, lc.catalog,
                                                        eval_config);
    report.relevance = online_report.relevance;
    report.diversity = online_report.diversity;
    report.click = online_report.click;
    report.add2cart = online_report.add2cart;
    report.purchase = online_report.purchase;
    report.query_count = online_report.query_count;
  }

  ensure_output_dir(config);
  {
    std::ofstream f(report_path);
    f << report.to_json(seed) << "\n";
  }
  {
    std::ofstream f(tsv_path);
    f << evalmetrics::EvalReport::tsv_header() << "\n" << report.tsv_row() << "\n";
  }
  out << report.to_json(seed) << "\n";
  out << "wrote " << report_path.string() << "\n";
  return kExitOk;
}

int cmd_coverage(const RunConfig& config, const CommandOptions& options,
                 const std::string& checkpoint_path, int n_rewrites, std::ostream& out) {
  const auto [seed, jobs] = resolve(config, options);
  (void)jobs;
  if (n_rewrites < 1) throw ConfigError("--n-rewrites must be >= 1");
  const auto report_path = out_path(config, "coverage_report.json");
  require_absent_or_force({report_path}, options.force);

  const auto lc = load_corpus(config);
  const auto params = policy::load_checkpoint(checkpoint_path, lc.vocab);
  const auto index = search::build_index(lc.catalog, search::default_field_weights(),
                                         config.search.k1, config.search.b);
  const auto eval_queries = queries_for_split(lc, corpus::Split::test);
  if (eval_queries.empty()) throw DataError("coverage: no test-split queries in the corpus");

  const auto report = evalmetrics::product_coverage(
      params, lc.vocab, eval_queries, lc.judgments.judgments, index, n_rewrites,
      derive_seed(seed, "coverage"), config.search.top_k, config.training.sample_temperature);

  json per_query = json::object();
  for (size_t i = 0; i < report.per_query.size(); ++i) {
    per_query[report.query_ids[i]] = report.per_query[i];
  }
  json j{{"seed", seed},
         {"n_rewrites", n_rewrites},
         {"mean_coverage", report.mean_coverage},
         {"per_query", per_query}};

  ensure_output_dir(config);
  {
    std::ofstream f(report_path);
    f << j.dump(2) << "\n";
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_rewrite(const RunConfig& config, const CommandOptions& options,
                const std::string& checkpoint_path, const std::string& query_text,
                const std::vector<std::string>& trace_checkpoints, std::ostream& out) {
  const auto [seed, jobs] = resolve(config, options);
  const auto lc = load_corpus(config);
  const auto index = search::build_index(lc.catalog, search::default_field_weights(),
                                         config.search.k1, config.search.b);
  auto judge = make_judge(config, options, seed);
  auto scorer = make_scorer(config);
  const auto profiles = obtain_profiles(config, seed);

  online::OnlineDeps deps;
  deps.vocab = &lc.vocab;
  deps.index = &index;
  deps.judge = judge.get();
  deps.scorer = scorer.get();
  deps.catalog = &lc.catalog;
  deps.profiles = profiles;

  auto online_config = to_online_config(config, seed, jobs);

  std::vector<std::pair<std::string, policy::PolicyParameters>> checkpoints;
  checkpoints.emplace_back(checkpoint_path, policy::load_checkpoint(checkpoint_path, lc.vocab));
  for (const auto& path : trace_checkpoints) {
    checkpoints.emplace_back(path, policy::load_checkpoint(path, lc.vocab));
  }

  const auto rows = online::trace_query(query_text, checkpoints, deps, online_config);
  out << "query: " << query_text << "\n";
  for (const auto& row : rows) {
    out << row.checkpoint_name << "\t" << row.rewrite << "\trelevance=" << row.reward.relevance
        << " diversity=" << row.reward.diversity << " click=" << row.reward.click
        << " add2cart=" << row.reward.add2cart << " purchase=" << row.reward.purchase << "\n";
  }
  return kExitOk;
}

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return kExitDependencyError;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace minielm::cli
