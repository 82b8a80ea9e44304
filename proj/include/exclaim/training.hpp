// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0
//
// Adam on per-instance cross-entropy, epoch loop with best-validation-loss
// selection, and the checkpoint file format:
//
//   <JSON manifest>\n
//   ---TENSORS---\n
//   raw float64 LE tensors, in the order EE, P_w, P_e, W_o, b_o (absent ones skipped)

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "exclaim/corpus.hpp"
#include "exclaim/embeddings.hpp"
#include "exclaim/entity_typing.hpp"
#include "exclaim/error.hpp"
#include "exclaim/json_util.hpp"
#include "exclaim/model.hpp"
#include "exclaim/parallel.hpp"
#include "exclaim/rng.hpp"

namespace exclaim {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr std::string_view kTensorMarker = "---TENSORS---";

struct TrainConfig {
  double learning_rate = 3e-5;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t max_len = kDefaultMaxLen;
  ModelConfig model;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail_config("learning_rate must be > 0");
    if (epochs < 1) fail_config("epochs must be >= 1");
    if (batch_size < 1) fail_config("batch_size must be >= 1");
    if (max_len < 1) fail_config("max_len must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      fail_config("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail_config("adam_eps must be > 0");
    model.validate();
    if (model.num_entity_types != scheme_cardinality(model.scheme))
      fail_config("num_entity_types must equal the scheme cardinality (" +
                  std::to_string(scheme_cardinality(model.scheme)) + ")");
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// ---------------------------------------------------------------------------
// Config <-> JSON. Unknown keys are rejected.

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_w", c.d_w},
          {"d_p", c.d_p},
          {"d_e", c.d_e},
          {"scheme", std::string(variant_name(c.scheme.variant))},
          {"el_threshold", c.scheme.el_threshold},
          {"num_entity_types", c.num_entity_types},
          {"num_classes", c.num_classes},
          {"use_projection", c.use_projection},
          {"use_attention", c.use_attention},
          {"entity_onehot", c.entity_onehot}};
}

/// Missing keys fall back to the family defaults of the named scheme;
/// an absent d_e under entity_onehot becomes k.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  constexpr std::string_view what = "model config";
  detail::reject_unknown(j, {"d_w", "d_p", "d_e", "scheme", "el_threshold", "num_entity_types", "num_classes",
                             "use_projection", "use_attention", "entity_onehot"},
                         what);
  std::string scheme = "NONE";
  detail::read_opt(j, "scheme", scheme, what);
  const auto variant = parse_variant(scheme);
  if (!variant) fail_config("unknown scheme '" + scheme + "'");
  ModelConfig c = make_model_config(*variant);
  detail::read_opt(j, "d_w", c.d_w, what);
  detail::read_opt(j, "d_p", c.d_p, what);
  detail::read_opt(j, "d_e", c.d_e, what);
  detail::read_opt(j, "el_threshold", c.scheme.el_threshold, what);
  detail::read_opt(j, "num_entity_types", c.num_entity_types, what);
  detail::read_opt(j, "num_classes", c.num_classes, what);
  detail::read_opt(j, "use_projection", c.use_projection, what);
  detail::read_opt(j, "use_attention", c.use_attention, what);
  detail::read_opt(j, "entity_onehot", c.entity_onehot, what);
  if (c.entity_onehot && !j.contains("d_e")) c.d_e = c.num_entity_types;
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},       {"batch_size", c.batch_size},
          {"adam_beta1", c.adam_beta1},       {"adam_beta2", c.adam_beta2}, {"adam_eps", c.adam_eps},
          {"seed", c.seed},                   {"max_len", c.max_len},     {"model", to_json(c.model)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  constexpr std::string_view what = "training config";
  detail::reject_unknown(j, {"learning_rate", "epochs", "batch_size", "adam_beta1", "adam_beta2", "adam_eps", "seed",
                             "max_len", "model"},
                         what);
  TrainConfig c;
  detail::read_opt(j, "learning_rate", c.learning_rate, what);
  detail::read_opt(j, "epochs", c.epochs, what);
  detail::read_opt(j, "batch_size", c.batch_size, what);
  detail::read_opt(j, "adam_beta1", c.adam_beta1, what);
  detail::read_opt(j, "adam_beta2", c.adam_beta2, what);
  detail::read_opt(j, "adam_eps", c.adam_eps, what);
  detail::read_opt(j, "seed", c.seed, what);
  detail::read_opt(j, "max_len", c.max_len, what);
  if (auto it = j.find("model"); it != j.end()) c.model = model_config_from_json(*it);
  return c;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  ModelParams first_moment;
  ModelParams second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ModelParams& p) { return {zeros_like(p), zeros_like(p), 0}; }
};

/// Where an update happened, for diagnostics on non-finite gradients.
struct StepContext {
  std::size_t epoch = 0;
  std::size_t batch = 0;
};

/// One bias-corrected Adam update of every tensor, in place.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const TrainConfig& cfg,
                      const StepContext& ctx = {}) {
  for_each_tensor(grads, [&](std::string_view name, const Matrix& g) {
    if (!g.all_finite())
      fail_numerical("non-finite gradient in tensor " + std::string(name) + " at epoch " + std::to_string(ctx.epoch) +
                     ", batch " + std::to_string(ctx.batch));
  });
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);

  auto update = [&](Matrix& p, const Matrix& g, Matrix& m, Matrix& v) {
    if (p.rows != g.rows || p.cols != g.cols) fail_data("adam_step: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.data[i] = cfg.adam_beta1 * m.data[i] + (1.0 - cfg.adam_beta1) * g.data[i];
      v.data[i] = cfg.adam_beta2 * v.data[i] + (1.0 - cfg.adam_beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / c1;
      const double vhat = v.data[i] / c2;
      p.data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  };
  update(params.entity_table, grads.entity_table, state.first_moment.entity_table, state.second_moment.entity_table);
  update(params.word_proj, grads.word_proj, state.first_moment.word_proj, state.second_moment.word_proj);
  update(params.entity_proj, grads.entity_proj, state.first_moment.entity_proj, state.second_moment.entity_proj);
  update(params.out_weight, grads.out_weight, state.first_moment.out_weight, state.second_moment.out_weight);
  update(params.out_bias, grads.out_bias, state.first_moment.out_bias, state.second_moment.out_bias);
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::string tag_ordering = tag_ordering_string();
  std::size_t epoch = 0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  ModelParams params;
};

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::array();
  for_each_tensor(ckpt.params, [&](std::string_view name, const Matrix& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}});
  });
  nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                             {"model", to_json(ckpt.model)},
                             {"train", to_json(ckpt.train)},
                             {"tag_ordering", ckpt.tag_ordering},
                             {"epoch", ckpt.epoch},
                             {"val_loss", std::isfinite(ckpt.val_loss) ? nlohmann::json(ckpt.val_loss) : nlohmann::json()},
                             {"tensors", tensors}};
  std::string out = manifest.dump(2);
  out += '\n';
  out += kTensorMarker;
  out += '\n';
  for_each_tensor(ckpt.params, [&](std::string_view, const Matrix& m) {
    out.append(reinterpret_cast<const char*>(m.data.data()), m.data.size() * sizeof(double));
  });
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  const std::string marker = "\n" + std::string(kTensorMarker) + "\n";
  const auto pos = bytes.find(marker);
  if (pos == std::string::npos) fail_data("checkpoint: tensor marker not found (corrupt file)");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(0, pos));
  } catch (const nlohmann::json::exception& e) {
    fail_data(std::string("checkpoint: corrupt manifest: ") + e.what());
  }
  Checkpoint ckpt;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      fail_data("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kCheckpointFormatVersion) + ")");
    ckpt.tag_ordering = manifest.at("tag_ordering").get<std::string>();
    if (ckpt.tag_ordering != tag_ordering_string())
      fail_data("checkpoint: incompatible entity tag ordering '" + ckpt.tag_ordering + "', this build uses '" +
                tag_ordering_string() + "'");
    ckpt.model = model_config_from_json(manifest.at("model"));
    ckpt.train = train_config_from_json(manifest.at("train"));
    ckpt.epoch = manifest.at("epoch").get<std::size_t>();
    const auto& vl = manifest.at("val_loss");
    ckpt.val_loss = vl.is_null() ? std::numeric_limits<double>::quiet_NaN() : vl.get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail_data(std::string("checkpoint: bad manifest: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) fail_data(std::string("checkpoint: ") + e.what());
    throw;
  }
  ckpt.model.validate();

  ckpt.params = shaped_params(ckpt.model);
  std::size_t expected = 0;
  std::size_t count = 0;
  for_each_tensor(ckpt.params, [&](std::string_view, const Matrix& m) {
    expected += m.size() * sizeof(double);
    ++count;
  });
  const auto& listed = manifest.at("tensors");
  if (!listed.is_array() || listed.size() != count) fail_data("checkpoint: tensor list does not match the model config");
  std::size_t k = 0;
  for_each_tensor(ckpt.params, [&](std::string_view name, const Matrix& m) {
    const auto& e = listed[k++];
    if (e.value("name", "") != name || e.value("rows", std::size_t{0}) != m.rows || e.value("cols", std::size_t{0}) != m.cols)
      fail_data("checkpoint: shape of tensor " + std::string(name) + " does not match the model config");
  });
  const std::size_t start = pos + marker.size();
  if (bytes.size() - start != expected)
    fail_data("checkpoint: expected " + std::to_string(expected) + " tensor bytes, found " +
              std::to_string(bytes.size() - start) + " (corrupt or truncated file)");
  std::size_t off = start;
  for_each_tensor(ckpt.params, [&](std::string_view, Matrix& m) {
    std::memcpy(m.data.data(), bytes.data() + off, m.size() * sizeof(double));
    off += m.size() * sizeof(double);
  });
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_data("cannot write checkpoint '" + path + "'");
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail_data("write error on checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Training

/// An instance resolved into model inputs.
struct Example {
  Matrix embeddings;
  std::vector<EntityTypeIndex> entity_types;
  std::size_t label = 0;
};

/// Fetches embeddings and computes entity indices. A stored matrix may carry
/// more rows than the (truncated) instance; the leading rows are used.
template <EmbeddingSource Source>
Example make_example(const ClaimInstance& inst, const Source& source, const ModelConfig& model) {
  Example ex;
  ex.embeddings = source.fetch(inst.id);
  if (ex.embeddings.cols != model.d_w)
    fail_data("embedding width " + std::to_string(ex.embeddings.cols) + " for '" + inst.id +
              "' does not match model d_w " + std::to_string(model.d_w));
  if (ex.embeddings.rows < inst.size())
    fail_data("embedding matrix for '" + inst.id + "' has " + std::to_string(ex.embeddings.rows) + " rows but " +
              std::to_string(inst.size()) + " tokens");
  if (ex.embeddings.rows > inst.size()) {
    ex.embeddings.rows = inst.size();
    ex.embeddings.data.resize(inst.size() * ex.embeddings.cols);
  }
  if (model.has_entities()) ex.entity_types = assign_indices(model.scheme, inst);
  ex.label = static_cast<std::size_t>(inst.label);
  return ex;
}

template <EmbeddingSource Source>
std::vector<Example> make_examples(const Dataset& ds, const Source& source, const ModelConfig& model) {
  std::vector<Example> out;
  out.reserve(ds.size());
  for (const auto& inst : ds.instances) out.push_back(make_example(inst, source, model));
  return out;
}

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy and accuracy of a model over prepared examples.
inline LossAccuracy evaluate_examples(const ModelParams& params, const ModelConfig& model,
                                      const std::vector<Example>& examples, unsigned threads = 1) {
  if (examples.empty()) fail_data("evaluate: no examples");
  std::vector<double> losses(examples.size());
  std::vector<int> hits(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    const auto& ex = examples[i];
    const auto p = predict(params, model, ex.embeddings, ex.entity_types);
    losses[i] = cross_entropy(p.probs, ex.label);
    hits[i] = p.label == ex.label;
  });
  LossAccuracy r;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    r.loss += losses[i];
    r.accuracy += hits[i];
  }
  r.loss /= static_cast<double>(examples.size());
  r.accuracy /= static_cast<double>(examples.size());
  return r;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct History {
  std::vector<EpochRecord> epochs;
};

inline nlohmann::json to_json(const History& h) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : h.epochs)
    arr.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                   {"val_accuracy", e.val_accuracy}});
  return {{"epochs", arr}};
}

struct TrainResult {
  Checkpoint best;
  History history;
};

struct TrainOptions {
  unsigned threads = 1;
  /// Called after each epoch, e.g. for progress output.
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains on prepared examples. Parameters are initialized from cfg.seed;
/// epoch shuffling draws from a second stream derived from the same seed.
inline TrainResult train_examples(const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                                  const TrainConfig& cfg, const TrainOptions& opts = {}) {
  cfg.validate();
  if (train_set.empty()) fail_data("training set is empty");
  if (val_set.empty()) fail_data("validation set is empty");

  const ModelConfig& model = cfg.model;
  ModelParams params = init_params(model, cfg.seed);
  AdamState state = AdamState::for_params(params);
  Rng shuffle_rng(mix_seed(cfg.seed, 1));

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<ModelParams> slot_grads;
  std::vector<double> slot_loss;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      slot_grads.resize(count);
      slot_loss.assign(count, 0.0);
      parallel_for(count, opts.threads, [&](std::size_t s) {
        const Example& ex = train_set[order[start + s]];
        const ForwardTrace trace = forward(params, model, ex.embeddings, ex.entity_types);
        slot_loss[s] = cross_entropy(trace.probs, ex.label);
        slot_grads[s] = backward(params, model, ex.embeddings, ex.entity_types, trace, ex.label);
      });
      ModelParams grads = zeros_like(params);
      for (std::size_t s = 0; s < count; ++s) {
        if (!std::isfinite(slot_loss[s]))
          fail_numerical("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch_no));
        epoch_loss += slot_loss[s];
        add_into(grads, slot_grads[s]);
      }
      scale_by(grads, 1.0 / static_cast<double>(count));
      adam_step(params, grads, state, cfg, {epoch, batch_no});
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(train_set.size());
    const auto val = evaluate_examples(params, model, val_set, opts.threads);
    if (!std::isfinite(val.loss)) fail_numerical("non-finite validation loss at epoch " + std::to_string(epoch));
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    result.history.epochs.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      result.best.model = model;
      result.best.train = cfg;
      result.best.epoch = epoch;
      result.best.val_loss = rec.val_loss;
      result.best.params = params;
    }
  }
  return result;
}

template <EmbeddingSource Source>
TrainResult train(const Dataset& train_set, const Dataset& val_set, const Source& source, const TrainConfig& cfg,
                  const TrainOptions& opts = {}) {
  cfg.validate();
  if (train_set.empty()) fail_data("training set is empty");
  if (val_set.empty()) fail_data("validation set is empty");
  const auto train_ex = make_examples(train_set, source, cfg.model);
  const auto val_ex = make_examples(val_set, source, cfg.model);
  return train_examples(train_ex, val_ex, cfg, opts);
}

}  // namespace exclaim
