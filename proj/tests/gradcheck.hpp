// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle for the model gradients. Only calls the
// forward pass; never the analytic backward.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "exclaim/model.hpp"
#include "exclaim/rng.hpp"

namespace exclaim::test {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradRelTol = 1e-4;
/// Denominator floor for the relative error; central differences at step
/// 1e-5 carry ~1e-11 absolute rounding noise.
inline constexpr double kGradRelFloor = 1e-6;

inline double loss_at(const ModelParams& p, const ModelConfig& c, const Matrix& we,
                      const std::vector<EntityTypeIndex>& et, std::size_t label) {
  return cross_entropy(forward(p, c, we, et).probs, label);
}

inline ModelParams finite_difference_gradient(const ModelParams& params, const ModelConfig& c, const Matrix& we,
                                              const std::vector<EntityTypeIndex>& et, std::size_t label,
                                              double step = kFdStep) {
  ModelParams g = zeros_like(params);
  ModelParams probe = params;
  auto fd = [&](Matrix& target, Matrix& out) {
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double orig = target.data[i];
      target.data[i] = orig + step;
      const double up = loss_at(probe, c, we, et, label);
      target.data[i] = orig - step;
      const double down = loss_at(probe, c, we, et, label);
      target.data[i] = orig;
      out.data[i] = (up - down) / (2.0 * step);
    }
  };
  fd(probe.entity_table, g.entity_table);
  fd(probe.word_proj, g.word_proj);
  fd(probe.entity_proj, g.entity_proj);
  fd(probe.out_weight, g.out_weight);
  fd(probe.out_bias, g.out_bias);
  return g;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradRelFloor});
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t entries = 0;
};

inline GradCheckResult compare_gradients(const ModelParams& analytic, const ModelParams& numeric) {
  GradCheckResult r;
  auto cmp = [&](const char* name, const Matrix& a, const Matrix& n) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double e = relative_error(a.data[i], n.data[i]);
      ++r.entries;
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst_tensor = name;
      }
    }
  };
  cmp("EE", analytic.entity_table, numeric.entity_table);
  cmp("P_w", analytic.word_proj, numeric.word_proj);
  cmp("P_e", analytic.entity_proj, numeric.entity_proj);
  cmp("W_o", analytic.out_weight, numeric.out_weight);
  cmp("b_o", analytic.out_bias, numeric.out_bias);
  return r;
}

/// Small random config: d_w=8, d_p=4, d_e=3 (or k when one-hot).
inline ModelConfig small_config(SchemeVariant variant, std::size_t k, bool use_projection, bool use_attention,
                                bool entity_onehot) {
  ModelConfig c;
  c.d_w = 8;
  c.d_p = 4;
  c.d_e = 3;
  c.scheme = {variant, kDefaultElThreshold};
  c.num_entity_types = variant == SchemeVariant::NONE ? 0 : k;
  c.use_projection = use_projection;
  c.use_attention = use_attention;
  c.entity_onehot = variant != SchemeVariant::NONE && entity_onehot;
  if (c.entity_onehot) c.d_e = k;
  return c;
}

struct RandomInput {
  Matrix we;
  std::vector<EntityTypeIndex> et;
  std::size_t label = 0;
};

inline RandomInput random_input(Rng& rng, const ModelConfig& c, std::size_t n) {
  RandomInput in;
  in.we = Matrix(n, c.d_w);
  for (double& v : in.we.data) v = rng.uniform(-1, 1);
  if (c.has_entities())
    for (std::size_t i = 0; i < n; ++i) in.et.push_back(static_cast<EntityTypeIndex>(rng.below(c.num_entity_types)));
  in.label = rng.below(c.num_classes);
  return in;
}

}  // namespace exclaim::test
