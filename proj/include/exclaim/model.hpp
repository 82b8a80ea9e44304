// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0
//
// Entity-aware attention classifier over frozen token embeddings.
//
// For a sequence of n tokens with embeddings we_i (d_w) and entity indices et_i:
//
//   ee_i = EE[et_i]                         (or one_hot(et_i) when entity_onehot)
//   h_i  = P_w we_i + P_e ee_i              (P_e term only when an entity channel exists)
//   A    = row_softmax(H H^T / sqrt(D))     D = width of h_i
//   Z    = A H
//   se   = (1/n) sum_i Z_i
//   out  = W_o se + b_o
//   y    = softmax(out)
//
// Ablations: use_attention = false sets Z = H. use_projection = false sets
// h_i = we_i + fit(ee_i, d_w), where fit zero-pads or truncates to d_w.
//
// All arithmetic is double precision. Linear maps are stored out x in.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "exclaim/entity_typing.hpp"
#include "exclaim/error.hpp"
#include "exclaim/rng.hpp"
#include "exclaim/tensor.hpp"

namespace exclaim {

inline constexpr double kLossClamp = 1e-12;

struct ModelConfig {
  std::size_t d_w = 768;
  std::size_t d_p = 256;
  std::size_t d_e = 128;
  EntityScheme scheme;
  /// Entity-type cardinality k. Zero for NONE; normally scheme_cardinality(scheme).
  std::size_t num_entity_types = 0;
  std::size_t num_classes = 2;
  bool use_projection = true;
  bool use_attention = true;
  bool entity_onehot = false;

  bool has_entities() const { return scheme.variant != SchemeVariant::NONE; }
  bool has_entity_table() const { return has_entities() && !entity_onehot; }
  /// Width of the per-token entity vector fed to the model.
  std::size_t entity_dim() const { return entity_onehot ? num_entity_types : d_e; }
  /// Width of h_i (and therefore of se).
  std::size_t hidden_dim() const { return use_projection ? d_p : d_w; }

  void validate() const {
    if (d_w < 1 || num_classes < 1) fail_config("model: d_w and num_classes must be >= 1");
    if (use_projection && d_p < 1) fail_config("model: d_p must be >= 1");
    scheme.validate();
    if (!has_entities()) {
      if (num_entity_types != 0) fail_config("model: scheme NONE requires num_entity_types = 0");
      if (entity_onehot) fail_config("model: entity_onehot requires an entity scheme");
      return;
    }
    if (num_entity_types < 1) fail_config("model: num_entity_types must be >= 1");
    if (entity_onehot) {
      if (d_e != num_entity_types) fail_config("model: entity_onehot requires d_e == num_entity_types");
    } else if (d_e < 1) {
      fail_config("model: d_e must be >= 1");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Config with the default dimensions for a model family (d_e 128 for NER,
/// 256 for NER_POPULARITY) and k taken from the scheme.
inline ModelConfig make_model_config(SchemeVariant variant, std::size_t d_w = 768, double el_threshold = kDefaultElThreshold) {
  ModelConfig c;
  c.d_w = d_w;
  c.scheme = {variant, el_threshold};
  c.num_entity_types = scheme_cardinality(variant);
  c.d_e = variant == SchemeVariant::NER_POPULARITY ? 256 : 128;
  return c;
}

/// Trainable tensors. Absent tensors are empty (0 x 0). Also used for gradients.
struct ModelParams {
  Matrix entity_table;  // EE   k x d_e
  Matrix word_proj;     // P_w  d_p x d_w
  Matrix entity_proj;   // P_e  d_p x entity_dim
  Matrix out_weight;    // W_o  C x hidden_dim
  Matrix out_bias;      // b_o  C x 1

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline constexpr std::array<const char*, 5> kTensorNames = {"EE", "P_w", "P_e", "W_o", "b_o"};

/// Visits the tensors in serialization order, skipping absent ones.
template <typename Params, typename F>
  requires std::same_as<std::remove_const_t<Params>, ModelParams>
void for_each_tensor(Params& p, F&& f) {
  auto visit = [&](const char* name, auto& m) {
    if (!m.empty()) f(std::string_view(name), m);
  };
  visit(kTensorNames[0], p.entity_table);
  visit(kTensorNames[1], p.word_proj);
  visit(kTensorNames[2], p.entity_proj);
  visit(kTensorNames[3], p.out_weight);
  visit(kTensorNames[4], p.out_bias);
}

/// Same tensors, same shapes, all zero.
inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  z.entity_table = Matrix(p.entity_table.rows, p.entity_table.cols);
  z.word_proj = Matrix(p.word_proj.rows, p.word_proj.cols);
  z.entity_proj = Matrix(p.entity_proj.rows, p.entity_proj.cols);
  z.out_weight = Matrix(p.out_weight.rows, p.out_weight.cols);
  z.out_bias = Matrix(p.out_bias.rows, p.out_bias.cols);
  return z;
}

/// dst += src, tensor by tensor (shapes must agree).
inline void add_into(ModelParams& dst, const ModelParams& src) {
  auto add = [](Matrix& d, const Matrix& s) {
    for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += s.data[i];
  };
  add(dst.entity_table, src.entity_table);
  add(dst.word_proj, src.word_proj);
  add(dst.entity_proj, src.entity_proj);
  add(dst.out_weight, src.out_weight);
  add(dst.out_bias, src.out_bias);
}

inline void scale_by(ModelParams& p, double factor) {
  for_each_tensor(p, [&](std::string_view, Matrix& m) {
    for (double& v : m.data) v *= factor;
  });
}

/// Allocates zero tensors with the shapes a config requires.
inline ModelParams shaped_params(const ModelConfig& c) {
  ModelParams p;
  if (c.has_entity_table()) p.entity_table = Matrix(c.num_entity_types, c.d_e);
  if (c.use_projection) {
    p.word_proj = Matrix(c.d_p, c.d_w);
    if (c.has_entities()) p.entity_proj = Matrix(c.d_p, c.entity_dim());
  }
  p.out_weight = Matrix(c.num_classes, c.hidden_dim());
  p.out_bias = Matrix(c.num_classes, 1);
  return p;
}

/// Glorot-uniform weights, zero bias. Tensors are filled in serialization
/// order (EE, P_w, P_e, W_o) from one Rng(seed), row-major.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p = shaped_params(config);
  Rng rng(seed);
  for_each_tensor(p, [&](std::string_view name, Matrix& m) {
    if (name == "b_o") return;
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
    for (double& v : m.data) v = rng.uniform(-limit, limit);
  });
  return p;
}

/// Intermediate values of one forward pass, kept for backward.
struct ForwardTrace {
  Matrix entity_vectors;  // n x entity_dim, the ee_i actually fed in (empty for NONE)
  Matrix hidden;          // H, n x D
  Matrix attention;       // A, n x n (empty when use_attention is false)
  Matrix context;         // Z, n x D
  std::vector<double> sentence;  // se
  std::vector<double> logits;    // out
  std::vector<double> probs;     // y
};

namespace detail {

inline void check_inputs(const ModelParams& params, const ModelConfig& config, const Matrix& we,
                         std::span<const EntityTypeIndex> et) {
  if (we.rows < 1) fail_data("forward: empty input sequence");
  if (we.cols != config.d_w)
    fail_data("forward: embedding width " + std::to_string(we.cols) + " does not match d_w " + std::to_string(config.d_w));
  if (config.has_entities()) {
    if (et.size() != we.rows)
      fail_data("forward: " + std::to_string(et.size()) + " entity indices for " + std::to_string(we.rows) + " tokens");
    for (auto idx : et)
      if (idx >= config.num_entity_types) fail_data("forward: entity index " + std::to_string(idx) + " out of range");
  } else if (!et.empty()) {
    fail_data("forward: entity indices supplied to a model without an entity channel");
  }
  if (params.out_weight.rows != config.num_classes || params.out_weight.cols != config.hidden_dim())
    fail_data("forward: parameter shapes do not match the model config");
  if (config.use_projection && (params.word_proj.rows != config.d_p || params.word_proj.cols != config.d_w))
    fail_data("forward: P_w shape does not match the model config");
  if (config.has_entity_table() &&
      (params.entity_table.rows != config.num_entity_types || params.entity_table.cols != config.d_e))
    fail_data("forward: EE shape does not match the model config");
}

}  // namespace detail

inline ForwardTrace forward(const ModelParams& params, const ModelConfig& config, const Matrix& we,
                            std::span<const EntityTypeIndex> et = {}) {
  detail::check_inputs(params, config, we, et);
  const std::size_t n = we.rows;
  const std::size_t D = config.hidden_dim();
  ForwardTrace t;

  if (config.has_entities()) {
    const std::size_t de = config.entity_dim();
    t.entity_vectors = Matrix(n, de);
    for (std::size_t i = 0; i < n; ++i) {
      if (config.entity_onehot) {
        t.entity_vectors(i, et[i]) = 1.0;
      } else {
        const auto src = params.entity_table.row(et[i]);
        std::copy(src.begin(), src.end(), t.entity_vectors.row(i).begin());
      }
    }
  }

  t.hidden = Matrix(n, D);
  if (config.use_projection) {
    // P_e ee depends only on the entity type; project each distinct type once.
    std::vector<std::vector<double>> projected(config.has_entities() ? config.num_entity_types : 0);
    for (std::size_t i = 0; i < n; ++i) {
      matvec(params.word_proj, we.row(i), t.hidden.row(i));
      if (config.has_entities()) {
        auto& pe = projected[et[i]];
        if (pe.empty()) {
          pe.resize(D);
          matvec(params.entity_proj, t.entity_vectors.row(i), pe);
        }
        auto h = t.hidden.row(i);
        for (std::size_t c = 0; c < D; ++c) h[c] += pe[c];
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      auto h = t.hidden.row(i);
      const auto w = we.row(i);
      std::copy(w.begin(), w.end(), h.begin());
      if (config.has_entities()) {
        const auto e = t.entity_vectors.row(i);
        const std::size_t m = std::min(e.size(), D);
        for (std::size_t c = 0; c < m; ++c) h[c] += e[c];
      }
    }
  }

  if (config.use_attention) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));
    t.attention = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto hi = t.hidden.row(i);
      auto a = t.attention.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        const auto hj = t.hidden.row(j);
        double dot = 0.0;
        for (std::size_t c = 0; c < D; ++c) dot += hi[c] * hj[c];
        a[j] = dot * scale;
      }
      softmax_inplace(a);
    }
    t.context = Matrix(n, D);
    for (std::size_t i = 0; i < n; ++i) {
      auto z = t.context.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        const double aij = t.attention(i, j);
        const auto hj = t.hidden.row(j);
        for (std::size_t c = 0; c < D; ++c) z[c] += aij * hj[c];
      }
    }
  } else {
    t.context = t.hidden;
  }

  t.sentence.assign(D, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = t.context.row(i);
    for (std::size_t c = 0; c < D; ++c) t.sentence[c] += z[c];
  }
  for (double& v : t.sentence) v /= static_cast<double>(n);

  const std::size_t C = config.num_classes;
  t.logits.assign(C, 0.0);
  matvec(params.out_weight, t.sentence, t.logits);
  for (std::size_t k = 0; k < C; ++k) t.logits[k] += params.out_bias.data[k];
  t.probs = t.logits;
  softmax_inplace(t.probs);
  return t;
}

/// -log(max(y[label], 1e-12)).
inline double cross_entropy(std::span<const double> y, std::size_t label) {
  return -std::log(std::max(y[label], kLossClamp));
}

/// Exact gradient of cross_entropy(forward(...), label) with respect to every
/// trainable tensor. Word embeddings are frozen and get none.
inline ModelParams backward(const ModelParams& params, const ModelConfig& config, const Matrix& we,
                            std::span<const EntityTypeIndex> et, const ForwardTrace& t, std::size_t label) {
  detail::check_inputs(params, config, we, et);
  const std::size_t n = we.rows;
  const std::size_t D = config.hidden_dim();
  const std::size_t C = config.num_classes;
  if (t.hidden.rows != n || t.hidden.cols != D || t.probs.size() != C)
    fail_data("backward: trace does not belong to these inputs");
  if (label >= C) fail_data("backward: label out of range");

  ModelParams g = zeros_like(params);

  // Loss is flat where the clamp is active.
  if (t.probs[label] < kLossClamp) return g;

  std::vector<double> g_logits(t.probs);
  g_logits[label] -= 1.0;

  outer_add(g.out_weight, g_logits, t.sentence);
  for (std::size_t k = 0; k < C; ++k) g.out_bias.data[k] = g_logits[k];

  std::vector<double> g_se(D, 0.0);
  matvec_t_add(params.out_weight, g_logits, g_se);

  // Every row of Z receives g_se / n.
  std::vector<double> g_z(D);
  for (std::size_t c = 0; c < D; ++c) g_z[c] = g_se[c] / static_cast<double>(n);

  Matrix g_h(n, D);
  if (config.use_attention) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));
    const Matrix& A = t.attention;
    const Matrix& H = t.hidden;
    // Value path: dH_j += sum_i A_ij dZ_i, and dZ_i is the same vector for all i.
    for (std::size_t j = 0; j < n; ++j) {
      double colsum = 0.0;
      for (std::size_t i = 0; i < n; ++i) colsum += A(i, j);
      auto gh = g_h.row(j);
      for (std::size_t c = 0; c < D; ++c) gh[c] += colsum * g_z[c];
    }
    // dA_ij = dZ_i . h_j = g_z . h_j, independent of i.
    std::vector<double> zh(n);
    for (std::size_t j = 0; j < n; ++j) {
      const auto hj = H.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < D; ++c) dot += g_z[c] * hj[c];
      zh[j] = dot;
    }
    // Softmax Jacobian per row: dS_ij = A_ij (dA_ij - sum_k A_ik dA_ik).
    Matrix g_s(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      double inner = 0.0;
      for (std::size_t k = 0; k < n; ++k) inner += A(i, k) * zh[k];
      for (std::size_t j = 0; j < n; ++j) g_s(i, j) = A(i, j) * (zh[j] - inner) * scale;
    }
    // S = H H^T * scale, so dH_i += sum_j (dS_ij + dS_ji) h_j.
    for (std::size_t i = 0; i < n; ++i) {
      auto gh = g_h.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        const double w = g_s(i, j) + g_s(j, i);
        if (w == 0.0) continue;
        const auto hj = H.row(j);
        for (std::size_t c = 0; c < D; ++c) gh[c] += w * hj[c];
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      auto gh = g_h.row(i);
      std::copy(g_z.begin(), g_z.end(), gh.begin());
    }
  }

  if (!config.has_entities()) {
    if (config.use_projection)
      for (std::size_t i = 0; i < n; ++i) outer_add(g.word_proj, g_h.row(i), we.row(i));
    return g;
  }

  const std::size_t de = config.entity_dim();
  if (!config.use_projection) {
    if (config.has_entity_table()) {
      const std::size_t m = std::min(de, D);
      for (std::size_t i = 0; i < n; ++i) {
        const auto gh = g_h.row(i);
        auto row = g.entity_table.row(et[i]);
        for (std::size_t c = 0; c < m; ++c) row[c] += gh[c];
      }
    }
    return g;
  }

  // Sum dh over tokens sharing an entity type, then push each sum through
  // P_e once: dP_e += G_t ee_t^T and dEE[t] += P_e^T G_t.
  std::vector<std::vector<double>> per_type(config.num_entity_types);
  std::vector<std::size_t> first_token(config.num_entity_types, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto gh = g_h.row(i);
    outer_add(g.word_proj, gh, we.row(i));
    auto& acc = per_type[et[i]];
    if (acc.empty()) {
      acc.assign(D, 0.0);
      first_token[et[i]] = i;
    }
    for (std::size_t c = 0; c < D; ++c) acc[c] += gh[c];
  }
  for (std::size_t type = 0; type < per_type.size(); ++type) {
    const auto& acc = per_type[type];
    if (acc.empty()) continue;
    outer_add(g.entity_proj, acc, t.entity_vectors.row(first_token[type]));
    if (config.has_entity_table()) matvec_t_add(params.entity_proj, acc, g.entity_table.row(type));
  }
  return g;
}

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probs;
  ForwardTrace trace;
};

/// argmax of y, ties going to the lowest class index.
inline std::size_t argmax_lowest(std::span<const double> y) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < y.size(); ++k)
    if (y[k] > y[best]) best = k;
  return best;
}

inline Prediction predict(const ModelParams& params, const ModelConfig& config, const Matrix& we,
                          std::span<const EntityTypeIndex> et = {}) {
  Prediction p;
  p.trace = forward(params, config, we, et);
  p.probs = p.trace.probs;
  p.label = argmax_lowest(p.probs);
  return p;
}

}  // namespace exclaim
