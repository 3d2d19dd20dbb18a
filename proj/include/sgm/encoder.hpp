#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgm/graph.hpp"
#include "sgm/matching.hpp"
#include "sgm/matrix.hpp"
#include "sgm/rng.hpp"
#include "sgm/sinkhorn.hpp"
#include "sgm/tape.hpp"

namespace sgm {

enum class Activation { kTanh, kLeakyRelu };

inline const char* activation_name(Activation a) {
  return a == Activation::kTanh ? "tanh" : "leaky_relu";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "leaky_relu") return Activation::kLeakyRelu;
  throw std::invalid_argument("unknown activation: " + s);
}

struct EncoderConfig {
  int layers = 5;
  int hidden = 64;      // 256 mirrors the reference experiments; 64 keeps CI fast
  int input_dim = kDefaultMaxDegree + 1;
  Activation activation = Activation::kTanh;
  double epsilon = 0.0;  // GIN self-weight offset
  bool epsilon_learnable = false;
  double leaky_slope = 0.1;

  void validate() const {
    if (layers < 1) throw std::invalid_argument("EncoderConfig: layers must be >= 1");
    if (hidden < 1) throw std::invalid_argument("EncoderConfig: hidden must be >= 1");
    if (input_dim < 1) throw std::invalid_argument("EncoderConfig: input_dim must be >= 1");
  }
};

/// All trainable parameters of the message-passing encoder: per layer a
/// one-layer perceptron (weight + bias) and the GIN epsilon.
struct EncoderWeights {
  EncoderConfig config;
  std::vector<DenseMatrix> w;    // layer l: in_l x hidden
  std::vector<DenseMatrix> b;    // 1 x hidden
  std::vector<DenseMatrix> eps;  // 1 x 1 per layer

  /// Symmetric uniform init in +-sqrt(6 / (fan_in + fan_out)).
  static EncoderWeights glorot(const EncoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    EncoderWeights weights;
    weights.config = cfg;
    Rng rng(seed);
    for (int l = 0; l < cfg.layers; ++l) {
      const int fan_in = l == 0 ? cfg.input_dim : cfg.hidden;
      const double bound = std::sqrt(6.0 / (fan_in + cfg.hidden));
      DenseMatrix wl(fan_in, cfg.hidden);
      for (int i = 0; i < wl.size(); ++i) wl.data()[i] = rng.uniform(-bound, bound);
      weights.w.push_back(std::move(wl));
      weights.b.push_back(DenseMatrix(1, cfg.hidden));
      DenseMatrix e(1, 1);
      e(0, 0) = cfg.epsilon;
      weights.eps.push_back(std::move(e));
    }
    return weights;
  }

  std::vector<DenseMatrix*> parameters() {
    std::vector<DenseMatrix*> ps;
    for (auto& m : w) ps.push_back(&m);
    for (auto& m : b) ps.push_back(&m);
    if (config.epsilon_learnable) {
      for (auto& m : eps) ps.push_back(&m);
    }
    return ps;
  }

  void validate() const {
    config.validate();
    if (static_cast<int>(w.size()) != config.layers || w.size() != b.size() ||
        w.size() != eps.size()) {
      throw std::invalid_argument("EncoderWeights: layer count mismatch");
    }
    for (int l = 0; l < config.layers; ++l) {
      const int fan_in = l == 0 ? config.input_dim : config.hidden;
      if (w[l].rows() != fan_in || w[l].cols() != config.hidden) {
        throw std::invalid_argument("EncoderWeights: layer " + std::to_string(l) +
                                    " weight is " + w[l].shape_str());
      }
      if (!w[l].all_finite() || !b[l].all_finite()) {
        throw std::invalid_argument("EncoderWeights: non-finite entries in layer " +
                                    std::to_string(l));
      }
    }
  }
};

/// Tape handles of registered encoder weights.
struct EncoderVars {
  std::vector<Var> w, b, eps;
};

inline EncoderVars register_encoder(Tape& t, const EncoderWeights& weights, bool trainable) {
  weights.validate();
  EncoderVars vars;
  for (const auto& m : weights.w) vars.w.push_back(t.leaf(m, trainable));
  for (const auto& m : weights.b) vars.b.push_back(t.leaf(m, trainable));
  const bool eps_trainable = trainable && weights.config.epsilon_learnable;
  for (const auto& m : weights.eps) vars.eps.push_back(t.leaf(m, eps_trainable));
  return vars;
}

/// GIN-style encoding: L rounds of
///   h <- act(W_l ((1 + eps_l) h + sum_{u in N(v)} h_u) + b_l),
/// sum aggregation via the dense adjacency. Permutation-equivariant: relabeled
/// nodes give identically relabeled rows.
inline Var encode(Tape& t, const EncoderVars& vars, const EncoderConfig& cfg, const Graph& g,
                  const DenseMatrix* features_override = nullptr) {
  const DenseMatrix& x = features_override ? *features_override : g.features;
  if (x.empty() || x.rows() != g.num_nodes) {
    throw std::invalid_argument("encode: graph has no usable features");
  }
  if (x.cols() != cfg.input_dim) {
    throw std::invalid_argument("encode: feature width " + std::to_string(x.cols()) +
                                " != configured input_dim " + std::to_string(cfg.input_dim));
  }
  Var adj = t.constant(g.adjacency());
  Var h = t.constant(x);
  for (int l = 0; l < cfg.layers; ++l) {
    Var self = cfg.epsilon_learnable
                   ? t.add(h, t.mul_scalar_var(h, vars.eps[l]))
                   : t.scalar_mul(h, 1.0 + t.value(vars.eps[l])(0, 0));
    Var combined = t.add(self, t.matmul(adj, h));
    Var pre = t.broadcast_add_cols(t.matmul(combined, vars.w[l]), vars.b[l]);
    h = cfg.activation == Activation::kTanh ? t.tanh(pre) : t.leaky_relu(pre, cfg.leaky_slope);
  }
  return h;
}

/// Matching preferences from the shared encoder: theta = H_s H_t^T.
inline Var compute_theta(Tape& t, const EncoderVars& vars, const EncoderConfig& cfg,
                         const GraphPair& pair, const DenseMatrix* source_features = nullptr,
                         const DenseMatrix* target_features = nullptr) {
  Var hs = encode(t, vars, cfg, pair.source, source_features);
  Var ht = encode(t, vars, cfg, pair.target, target_features);
  return t.matmul(hs, t.transpose(ht));
}

/// diag(a) * X: row i scaled by its matched probability.
inline DenseMatrix reweighted_features(const DenseMatrix& features,
                                       const std::vector<double>& a) {
  if (static_cast<int>(a.size()) != features.rows()) {
    throw std::invalid_argument("reweighted_features: got " + std::to_string(a.size()) +
                                " weights for " + std::to_string(features.rows()) + " rows");
  }
  DenseMatrix out = features;
  for (int i = 0; i < out.rows(); ++i) {
    for (int j = 0; j < out.cols(); ++j) out(i, j) *= a[i];
  }
  return out;
}

/// One stochastic refinement pass: estimate per-node matched probabilities
/// from the previous parameters (a mean over samples, no gradient into
/// prev_theta), reweight input features by them, and re-encode with the same
/// weights. Gradients flow through the current pass only.
inline Var refine_theta(Tape& t, const EncoderVars& vars, const EncoderConfig& cfg,
                        const DenseMatrix& prev_theta, const GraphPair& pair,
                        const SinkhornConfig& sample_cfg, int num_samples, uint64_t seed,
                        bool allow_dummy = true) {
  MatchParams prev{prev_theta};
  prev.validate();
  DenseMatrix m_bar = mean_matching(prev, sample_cfg, num_samples, seed, allow_dummy);
  auto [a_s, a_t] = matched_probabilities(m_bar);
  DenseMatrix fs = reweighted_features(pair.source.features, a_s);
  DenseMatrix ft = reweighted_features(pair.target.features, a_t);
  return compute_theta(t, vars, cfg, pair, &fs, &ft);
}

// -- checkpoint io -----------------------------------------------------------

constexpr int kCheckpointVersion = 1;

inline void save_weights(const EncoderWeights& weights, const std::string& path) {
  weights.validate();
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["config"] = {{"layers", weights.config.layers},
                 {"hidden", weights.config.hidden},
                 {"input_dim", weights.config.input_dim},
                 {"activation", activation_name(weights.config.activation)},
                 {"epsilon", weights.config.epsilon},
                 {"epsilon_learnable", weights.config.epsilon_learnable},
                 {"leaky_slope", weights.config.leaky_slope}};
  auto dump = [](const DenseMatrix& m) {
    nlohmann::json a;
    a["rows"] = m.rows();
    a["cols"] = m.cols();
    a["data"] = std::vector<double>(m.data(), m.data() + m.size());
    return a;
  };
  nlohmann::json arrays;
  for (size_t l = 0; l < weights.w.size(); ++l) {
    arrays["w" + std::to_string(l)] = dump(weights.w[l]);
    arrays["b" + std::to_string(l)] = dump(weights.b[l]);
    arrays["eps" + std::to_string(l)] = dump(weights.eps[l]);
  }
  j["arrays"] = std::move(arrays);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump() << "\n";
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline EncoderWeights load_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (!j.contains("version") || j["version"].get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path + ": unsupported version");
  }
  EncoderWeights weights;
  const auto& c = j["config"];
  weights.config.layers = c["layers"].get<int>();
  weights.config.hidden = c["hidden"].get<int>();
  weights.config.input_dim = c["input_dim"].get<int>();
  weights.config.activation = activation_from_name(c["activation"].get<std::string>());
  weights.config.epsilon = c["epsilon"].get<double>();
  weights.config.epsilon_learnable = c["epsilon_learnable"].get<bool>();
  weights.config.leaky_slope = c["leaky_slope"].get<double>();
  auto parse = [&](const std::string& name) {
    const auto& a = j["arrays"].at(name);
    DenseMatrix m(a["rows"].get<int>(), a["cols"].get<int>());
    const auto& data = a["data"];
    if (static_cast<int>(data.size()) != m.size()) {
      throw std::runtime_error("checkpoint " + path + ": array " + name + " has wrong length");
    }
    for (int i = 0; i < m.size(); ++i) m.data()[i] = data[i].get<double>();
    return m;
  };
  for (int l = 0; l < weights.config.layers; ++l) {
    weights.w.push_back(parse("w" + std::to_string(l)));
    weights.b.push_back(parse("b" + std::to_string(l)));
    weights.eps.push_back(parse("eps" + std::to_string(l)));
  }
  weights.validate();
  return weights;
}

}  // namespace sgm
