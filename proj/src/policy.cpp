#include "minielm/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "minielm/common.hpp"
#include "minielm/rng.hpp"

namespace minielm::policy {

namespace {

using corpus::Vocabulary;

void check_config(const PolicyConfig& c) {
  if (c.context_window < 1) throw std::invalid_argument("context_window must be >= 1");
  if (c.embedding_dim < 1) throw std::invalid_argument("embedding_dim must be >= 1");
  if (c.hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
  if (c.vocab_size <= Vocabulary::kNumSpecial) {
    throw std::invalid_argument("vocab_size must exceed the special-token count");
  }
  if (c.max_generation_len < 1) throw std::invalid_argument("max_generation_len must be >= 1");
}

void check_token_ids(std::span<const int32_t> ids, int vocab_size) {
  for (int32_t id : ids) {
    if (id < 0 || id >= vocab_size) {
      throw std::invalid_argument("token id " + std::to_string(id) +
                                  " out of range for vocab size " + std::to_string(vocab_size));
    }
  }
}

}  // namespace

PolicyConfig teacher_preset(int vocab_size) {
  return PolicyConfig{Role::teacher, 3, 64, 256, vocab_size, 16};
}

PolicyConfig student_preset(int vocab_size) {
  return PolicyConfig{Role::student, 3, 32, 64, vocab_size, 16};
}

ParameterSet ParameterSet::zeros_like(const PolicyConfig& config) {
  ParameterSet p;
  const size_t v = static_cast<size_t>(config.vocab_size);
  const size_t e = static_cast<size_t>(config.embedding_dim);
  const size_t h = static_cast<size_t>(config.hidden_dim);
  const size_t n = static_cast<size_t>(config.context_window);
  p.embedding.assign(v * e, 0.0);
  p.hidden_w.assign(n * e * h, 0.0);
  p.hidden_b.assign(h, 0.0);
  p.output_w.assign(h * v, 0.0);
  p.output_b.assign(v, 0.0);
  return p;
}

size_t ParameterSet::count() const {
  return embedding.size() + hidden_w.size() + hidden_b.size() + output_w.size() + output_b.size();
}

bool ParameterSet::same_shape(const ParameterSet& other) const {
  return embedding.size() == other.embedding.size() && hidden_w.size() == other.hidden_w.size() &&
         hidden_b.size() == other.hidden_b.size() && output_w.size() == other.output_w.size() &&
         output_b.size() == other.output_b.size();
}

bool ParameterSet::all_finite() const {
  auto finite = [](const std::vector<double>& v) {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  };
  return finite(embedding) && finite(hidden_w) && finite(hidden_b) && finite(output_w) &&
         finite(output_b);
}

double ParameterSet::squared_norm() const {
  auto sq = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
  };
  return sq(embedding) + sq(hidden_w) + sq(hidden_b) + sq(output_w) + sq(output_b);
}

void ParameterSet::add_scaled(const ParameterSet& other, double scale) {
  if (!same_shape(other)) throw std::invalid_argument("ParameterSet shape mismatch");
  auto axpy = [scale](std::vector<double>& dst, const std::vector<double>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  };
  axpy(embedding, other.embedding);
  axpy(hidden_w, other.hidden_w);
  axpy(hidden_b, other.hidden_b);
  axpy(output_w, other.output_w);
  axpy(output_b, other.output_b);
}

void ParameterSet::scale(double factor) {
  auto mul = [factor](std::vector<double>& v) {
    for (double& x : v) x *= factor;
  };
  mul(embedding);
  mul(hidden_w);
  mul(hidden_b);
  mul(output_w);
  mul(output_b);
}

bool TokenSequence::terminal() const {
  return !ids.empty() && ids.back() == Vocabulary::kEos;
}

size_t TokenSequence::length_without_eos() const {
  return terminal() ? ids.size() - 1 : ids.size();
}

std::vector<int32_t> make_prompt(const Vocabulary& vocab, const std::string& query_text) {
  auto ids = vocab.encode_text(query_text);
  ids.push_back(Vocabulary::kBos);
  return ids;
}

PolicyParameters init_params(const PolicyConfig& config, uint64_t seed) {
  check_config(config);
  PolicyParameters params;
  params.config = config;
  params.tensors = ParameterSet::zeros_like(config);
  Rng rng(seed);
  auto fill = [&rng](std::vector<double>& tensor, double fan_in) {
    const double scale = 1.0 / std::sqrt(fan_in);
    for (double& x : tensor) x = rng.uniform(-scale, scale);
  };
  fill(params.tensors.embedding, config.embedding_dim);
  fill(params.tensors.hidden_w, static_cast<double>(config.context_window) * config.embedding_dim);
  fill(params.tensors.output_w, config.hidden_dim);
  // biases stay zero
  return params;
}

std::vector<int32_t> window_context(std::span<const int32_t> prefix, int n) {
  std::vector<int32_t> context(static_cast<size_t>(n), Vocabulary::kPad);
  const size_t take = std::min(prefix.size(), static_cast<size_t>(n));
  for (size_t i = 0; i < take; ++i) {
    context[static_cast<size_t>(n) - take + i] = prefix[prefix.size() - take + i];
  }
  return context;
}

namespace {

struct Forward {
  std::vector<int32_t> context;  // exactly n ids
  std::vector<double> x;         // n*E concatenated embeddings
  std::vector<double> h;         // tanh activations
  std::vector<double> probs;     // softmax over vocab
};

Forward forward_pass(const PolicyParameters& params, std::span<const int32_t> raw_context) {
  const auto& c = params.config;
  check_token_ids(raw_context, c.vocab_size);
  Forward f;
  f.context = window_context(raw_context, c.context_window);

  const size_t n = static_cast<size_t>(c.context_window);
  const size_t e = static_cast<size_t>(c.embedding_dim);
  const size_t hd = static_cast<size_t>(c.hidden_dim);
  const size_t v = static_cast<size_t>(c.vocab_size);

  f.x.resize(n * e);
  for (size_t slot = 0; slot < n; ++slot) {
    const auto token = static_cast<size_t>(f.context[slot]);
    std::copy_n(params.tensors.embedding.begin() + token * e, e, f.x.begin() + slot * e);
  }

  f.h.assign(hd, 0.0);
  for (size_t i = 0; i < n * e; ++i) {
    const double xi = f.x[i];
    if (xi == 0.0) continue;
    const double* row = params.tensors.hidden_w.data() + i * hd;
    for (size_t j = 0; j < hd; ++j) f.h[j] += xi * row[j];
  }
  for (size_t j = 0; j < hd; ++j) f.h[j] = std::tanh(f.h[j] + params.tensors.hidden_b[j]);

  std::vector<double> logits(params.tensors.output_b);
  for (size_t j = 0; j < hd; ++j) {
    const double hj = f.h[j];
    if (hj == 0.0) continue;
    const double* row = params.tensors.output_w.data() + j * v;
    for (size_t k = 0; k < v; ++k) logits[k] += hj * row[k];
  }

  double max_logit = logits[0];
  for (double z : logits) max_logit = std::max(max_logit, z);
  double total = 0.0;
  f.probs.resize(v);
  for (size_t k = 0; k < v; ++k) {
    f.probs[k] = std::exp(logits[k] - max_logit);
    total += f.probs[k];
  }
  for (double& p : f.probs) p /= total;
  return f;
}

}  // namespace

std::vector<double> next_token_distribution(const PolicyParameters& params,
                                            std::span<const int32_t> context) {
  return forward_pass(params, context).probs;
}

double sequence_logprob(const PolicyParameters& params, std::span<const int32_t> prompt,
                        const TokenSequence& response) {
  if (!response.terminal()) {
    throw std::invalid_argument("sequence_logprob: response must end with EOS");
  }
  check_token_ids(prompt, params.config.vocab_size);
  check_token_ids(response.ids, params.config.vocab_size);
  std::vector<int32_t> prefix(prompt.begin(), prompt.end());
  double logprob = 0.0;
  for (int32_t token : response.ids) {
    const auto probs = next_token_distribution(params, prefix);
    logprob += std::log(probs[static_cast<size_t>(token)]);
    prefix.push_back(token);
  }
  return logprob;
}

TokenSequence sample_rewrite(const PolicyParameters& params, std::span<const int32_t> prompt,
                             double temperature, uint64_t seed) {
  if (temperature <= 0.0) throw std::invalid_argument("sample_rewrite: temperature must be > 0");
  check_token_ids(prompt, params.config.vocab_size);
  Rng rng(seed);
  std::vector<int32_t> prefix(prompt.begin(), prompt.end());
  TokenSequence out;
  for (int step = 0; step < params.config.max_generation_len; ++step) {
    auto probs = next_token_distribution(params, prefix);
    // Renormalizing p^(1/T) equals softmax(logits / T); work in log space so
    // small temperatures stay finite.
    if (temperature != 1.0) {
      double max_log = -std::numeric_limits<double>::infinity();
      for (double p : probs) max_log = std::max(max_log, std::log(p));
      double total = 0.0;
      for (double& p : probs) {
        p = std::exp((std::log(p) - max_log) / temperature);
        total += p;
      }
      for (double& p : probs) p /= total;
    }
    const int32_t token = rng.categorical(probs);
    out.ids.push_back(token);
    if (token == Vocabulary::kEos) return out;
    prefix.push_back(token);
  }
  out.ids.push_back(Vocabulary::kEos);
  return out;
}

TokenSequence greedy_decode(const PolicyParameters& params, std::span<const int32_t> prompt) {
  check_token_ids(prompt, params.config.vocab_size);
  std::vector<int32_t> prefix(prompt.begin(), prompt.end());
  TokenSequence out;
  for (int step = 0; step < params.config.max_generation_len; ++step) {
    const auto probs = next_token_distribution(params, prefix);
    int32_t best = 0;
    for (size_t k = 1; k < probs.size(); ++k) {
      if (probs[k] > probs[static_cast<size_t>(best)]) best = static_cast<int32_t>(k);
    }
    out.ids.push_back(best);
    if (best == Vocabulary::kEos) return out;
    prefix.push_back(best);
  }
  out.ids.push_back(Vocabulary::kEos);
  return out;
}

ParameterSet backprop(const PolicyParameters& params, std::span<const PositionGradient> positions) {
  const auto& c = params.config;
  const size_t n = static_cast<size_t>(c.context_window);
  const size_t e = static_cast<size_t>(c.embedding_dim);
  const size_t hd = static_cast<size_t>(c.hidden_dim);
  const size_t v = static_cast<size_t>(c.vocab_size);

  ParameterSet grad = ParameterSet::zeros_like(c);
  std::vector<double> dh(hd);
  std::vector<double> da(hd);
  std::vector<double> dx(n * e);

  for (const auto& pos : positions) {
    if (pos.dlogits.size() != v) {
      throw std::invalid_argument("backprop: dlogits size " + std::to_string(pos.dlogits.size()) +
                                  " does not match vocab size " + std::to_string(v));
    }
    const Forward f = forward_pass(params, pos.context);

    // Output layer: logits = W2^T h + b2.
    for (size_t k = 0; k < v; ++k) grad.output_b[k] += pos.dlogits[k];
    std::fill(dh.begin(), dh.end(), 0.0);
    for (size_t j = 0; j < hd; ++j) {
      const double hj = f.h[j];
      double acc = 0.0;
      double* grow = grad.output_w.data() + j * v;
      const double* wrow = params.tensors.output_w.data() + j * v;
      for (size_t k = 0; k < v; ++k) {
        grow[k] += hj * pos.dlogits[k];
        acc += wrow[k] * pos.dlogits[k];
      }
      dh[j] = acc;
    }

    // tanh backprop into the hidden pre-activation.
    for (size_t j = 0; j < hd; ++j) da[j] = dh[j] * (1.0 - f.h[j] * f.h[j]);
    for (size_t j = 0; j < hd; ++j) grad.hidden_b[j] += da[j];

    std::fill(dx.begin(), dx.end(), 0.0);
    for (size_t i = 0; i < n * e; ++i) {
      const double xi = f.x[i];
      double* grow = grad.hidden_w.data() + i * hd;
      const double* wrow = params.tensors.hidden_w.data() + i * hd;
      double acc = 0.0;
      for (size_t j = 0; j < hd; ++j) {
        grow[j] += xi * da[j];
        acc += wrow[j] * da[j];
      }
      dx[i] = acc;
    }

    // Scatter back into the embedding rows (accumulates for repeated ids).
    for (size_t slot = 0; slot < n; ++slot) {
      const auto token = static_cast<size_t>(f.context[slot]);
      double* erow = grad.embedding.data() + token * e;
      const double* dslice = dx.data() + slot * e;
      for (size_t d = 0; d < e; ++d) erow[d] += dslice[d];
    }
  }
  return grad;
}

namespace {

constexpr char kCkptMagic[8] = {'M', 'E', 'L', 'M', 'C', 'K', 'P', '\0'};
constexpr uint32_t kCkptVersion = 1;

void write_bytes(std::ostream& out, const void* data, size_t size) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

template <typename T>
void write_pod(std::ostream& out, T value) {
  write_bytes(out, &value, sizeof value);
}

void write_tensor(std::ostream& out, const std::vector<double>& t) {
  write_pod<uint64_t>(out, t.size());
  write_bytes(out, t.data(), t.size() * sizeof(double));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  return value;
}

std::vector<double> read_tensor(std::istream& in, size_t expected) {
  const auto size = read_pod<uint64_t>(in);
  if (size != expected) {
    throw DataError("checkpoint tensor has " + std::to_string(size) + " entries, expected " +
                    std::to_string(expected));
  }
  std::vector<double> t(size);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(size * sizeof(double)));
  return t;
}

}  // namespace

void save_checkpoint(const PolicyParameters& params, const Vocabulary& vocab, uint64_t seed,
                     const std::string& path) {
  if (params.config.vocab_size != vocab.size()) {
    throw DataError("checkpoint vocab size mismatch: params " +
                    std::to_string(params.config.vocab_size) + " vs vocabulary " +
                    std::to_string(vocab.size()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  write_bytes(out, kCkptMagic, sizeof kCkptMagic);
  write_pod<uint32_t>(out, kCkptVersion);
  write_pod<uint8_t>(out, params.config.role == Role::teacher ? 0 : 1);
  write_pod<int32_t>(out, params.config.context_window);
  write_pod<int32_t>(out, params.config.embedding_dim);
  write_pod<int32_t>(out, params.config.hidden_dim);
  write_pod<int32_t>(out, params.config.vocab_size);
  write_pod<int32_t>(out, params.config.max_generation_len);
  write_pod<uint64_t>(out, vocab.hash());
  write_pod<uint64_t>(out, seed);
  write_tensor(out, params.tensors.embedding);
  write_tensor(out, params.tensors.hidden_w);
  write_tensor(out, params.tensors.hidden_b);
  write_tensor(out, params.tensors.output_w);
  write_tensor(out, params.tensors.output_b);
  if (!out) throw DataError("failed while writing checkpoint: " + path);
}

PolicyParameters load_checkpoint(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCkptMagic, sizeof magic) != 0) {
    throw DataError("not a policy checkpoint: " + path);
  }
  const auto version = read_pod<uint32_t>(in);
  if (version != kCkptVersion) {
    throw DataError("checkpoint " + path + " has format version " + std::to_string(version) +
                    ", expected " + std::to_string(kCkptVersion));
  }
  PolicyParameters params;
  params.config.role = read_pod<uint8_t>(in) == 0 ? Role::teacher : Role::student;
  params.config.context_window = read_pod<int32_t>(in);
  params.config.embedding_dim = read_pod<int32_t>(in);
  params.config.hidden_dim = read_pod<int32_t>(in);
  params.config.vocab_size = read_pod<int32_t>(in);
  params.config.max_generation_len = read_pod<int32_t>(in);
  const auto vocab_hash = read_pod<uint64_t>(in);
  read_pod<uint64_t>(in);  // seed echo, informational
  if (vocab_hash != vocab.hash()) {
    throw DataError("checkpoint " + path + " was trained with a different vocabulary (hash mismatch)");
  }
  if (params.config.vocab_size != vocab.size()) {
    throw DataError("checkpoint " + path + " vocab size does not match the supplied vocabulary");
  }
  check_config(params.config);

  const auto& c = params.config;
  const size_t n = static_cast<size_t>(c.context_window);
  const size_t e = static_cast<size_t>(c.embedding_dim);
  const size_t hd = static_cast<size_t>(c.hidden_dim);
  const size_t v = static_cast<size_t>(c.vocab_size);
  params.tensors.embedding = read_tensor(in, v * e);
  params.tensors.hidden_w = read_tensor(in, n * e * hd);
  params.tensors.hidden_b = read_tensor(in, hd);
  params.tensors.output_w = read_tensor(in, hd * v);
  params.tensors.output_b = read_tensor(in, v);
  if (!in) throw DataError("truncated checkpoint: " + path);
  return params;
}

}  // namespace minielm::policy
