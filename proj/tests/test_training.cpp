// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "exclaim/synthgen.hpp"
#include "exclaim/training.hpp"
#include "test_util.hpp"

using namespace exclaim;

namespace {

TrainConfig scalar_config() {
  TrainConfig cfg;
  cfg.model = make_model_config(SchemeVariant::NONE, 4);
  return cfg;
}

ModelParams single_scalar(double value) {
  ModelParams p;
  p.out_bias = Matrix(1, 1, value);
  return p;
}

struct Toy {
  Dataset train, val;
  MemoryStore store{16};
};

Toy make_toy(std::size_t n_train = 96, std::size_t n_val = 32) {
  GenSpec spec;
  spec.rule = LabelRule::entity_presence(NerTag::DIS);
  spec.n_instances = n_train + n_val;
  spec.d_w = 16;
  spec.min_len = 3;
  spec.max_len = 6;
  spec.seed = 5;
  auto gen = generate(spec);
  Toy toy;
  for (auto& [id, m] : gen.embeddings) toy.store.add(id, m);
  auto parts = split_dataset(gen.dataset, {n_train, n_val});
  toy.train = parts[0];
  toy.val = parts[1];
  return toy;
}

TrainConfig toy_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.model = make_model_config(SchemeVariant::NER, 16);
  cfg.model.d_p = 16;
  cfg.model.d_e = 8;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(AdamStep, ZeroGradientLeavesParamsButCountsStep) {
  const auto cfg = toy_config(1);
  auto p = init_params(cfg.model, 1);
  const auto before = p;
  auto state = AdamState::for_params(p);
  adam_step(p, zeros_like(p), state, cfg);
  EXPECT_EQ(p, before);
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  // m_hat = g, v_hat = g^2 after one step, so the update is -lr * g / (|g| + eps).
  auto cfg = scalar_config();
  auto p = single_scalar(0.5);
  auto state = AdamState::for_params(p);
  adam_step(p, single_scalar(1.0), state, cfg);
  EXPECT_DOUBLE_EQ(p.out_bias.data[0], 0.5 - cfg.learning_rate / (1.0 + cfg.adam_eps));
  EXPECT_NEAR(p.out_bias.data[0], 0.5 - 3e-5, 1e-12);
}

TEST(AdamStep, MatchesClosedFormOverSeveralSteps) {
  auto cfg = scalar_config();
  cfg.learning_rate = 0.1;
  auto p = single_scalar(1.0);
  auto state = AdamState::for_params(p);
  double x = 1.0, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -1.2, 0.7, 2.0, -0.1};
  for (int t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    adam_step(p, single_scalar(g), state, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.out_bias.data[0], x, 1e-15);
  }
}

TEST(AdamStep, NonFiniteGradientReportsWhere) {
  const auto cfg = toy_config(1);
  auto p = init_params(cfg.model, 1);
  auto g = zeros_like(p);
  g.entity_proj.data[3] = std::numeric_limits<double>::quiet_NaN();
  auto state = AdamState::for_params(p);
  try {
    adam_step(p, g, state, cfg, {4, 7});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Numerical);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("P_e"), std::string::npos);
    EXPECT_NE(msg.find("epoch 4"), std::string::npos);
    EXPECT_NE(msg.find("batch 7"), std::string::npos);
  }
}

TEST(TrainConfig, Validation) {
  auto cfg = toy_config(1);
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = toy_config(1);
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = toy_config(1);
  cfg.model.num_entity_types = 5;
  EXPECT_THROW(cfg.validate(), Error);
  TrainConfig defaults;
  EXPECT_EQ(defaults.learning_rate, 3e-5);
  EXPECT_EQ(defaults.epochs, 30u);
  EXPECT_EQ(defaults.batch_size, 32u);
  EXPECT_EQ(defaults.max_len, 128u);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
  auto cfg = toy_config(3);
  cfg.model.scheme.el_threshold = -0.3;
  cfg.seed = 1234567890123ULL;
  EXPECT_EQ(train_config_from_json(to_json(cfg)), cfg);
  auto j = to_json(cfg);
  j["momentum"] = 0.5;
  EXPECT_THROW(train_config_from_json(j), Error);
  j = to_json(cfg);
  j["model"]["heads"] = 2;
  EXPECT_THROW(train_config_from_json(j), Error);
}

TEST(Train, SingleEpoch) {
  auto toy = make_toy();
  const auto r = train(toy.train, toy.val, toy.store, toy_config(1));
  ASSERT_EQ(r.history.epochs.size(), 1u);
  EXPECT_EQ(r.best.epoch, 1u);
  EXPECT_EQ(r.best.val_loss, r.history.epochs[0].val_loss);
}

TEST(Train, DeterministicAcrossRunsAndThreadCounts) {
  auto toy = make_toy();
  const auto cfg = toy_config(3);
  const auto a = train(toy.train, toy.val, toy.store, cfg);
  const auto b = train(toy.train, toy.val, toy.store, cfg, {.threads = 3, .on_epoch = {}});
  EXPECT_EQ(a.best.params, b.best.params);
  ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e) {
    EXPECT_EQ(a.history.epochs[e].train_loss, b.history.epochs[e].train_loss);
    EXPECT_EQ(a.history.epochs[e].val_loss, b.history.epochs[e].val_loss);
  }
  EXPECT_EQ(serialize_checkpoint(a.best), serialize_checkpoint(b.best));
}

TEST(Train, BestCheckpointHasMinimalValidationLoss) {
  auto toy = make_toy();
  auto cfg = toy_config(6);
  cfg.learning_rate = 0.02;  // large steps so validation loss moves around
  const auto r = train(toy.train, toy.val, toy.store, cfg);
  for (const auto& e : r.history.epochs) EXPECT_LE(r.best.val_loss, e.val_loss);
  std::size_t first_min = 0;
  for (std::size_t e = 0; e < r.history.epochs.size(); ++e)
    if (r.history.epochs[e].val_loss == r.best.val_loss) {
      first_min = e + 1;
      break;
    }
  EXPECT_EQ(r.best.epoch, first_min);
}

TEST(Train, LossDecreasesOnSeparableToy) {
  auto toy = make_toy(160, 40);
  auto cfg = toy_config(30);
  const auto initial = evaluate_examples(init_params(cfg.model, cfg.seed), cfg.model,
                                         make_examples(toy.train, toy.store, cfg.model));
  const auto r = train(toy.train, toy.val, toy.store, cfg);
  EXPECT_LT(r.history.epochs.back().train_loss, initial.loss);
}

TEST(Train, DoesNotMutateInputs) {
  auto toy = make_toy();
  const auto train_copy = toy.train.instances;
  train(toy.train, toy.val, toy.store, toy_config(1));
  EXPECT_EQ(toy.train.instances, train_copy);
}

TEST(Train, Errors) {
  auto toy = make_toy();
  EXPECT_THROW(train(Dataset{}, toy.val, toy.store, toy_config(1)), Error);
  EXPECT_THROW(train(toy.train, Dataset{}, toy.store, toy_config(1)), Error);
  MemoryStore empty(16);
  try {
    train(toy.train, toy.val, empty, toy_config(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Data);
    EXPECT_NE(std::string(e.what()).find(toy.train.instances[0].id), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, SaveLoadRoundTripIsBitExact) {
  test::TempDir dir;
  auto toy = make_toy();
  const auto r = train(toy.train, toy.val, toy.store, toy_config(2));
  save_checkpoint(r.best, dir.file("m.ckpt"));
  const auto back = load_checkpoint(dir.file("m.ckpt"));
  EXPECT_EQ(back.params, r.best.params);
  EXPECT_EQ(back.model, r.best.model);
  EXPECT_EQ(back.train, r.best.train);
  EXPECT_EQ(back.epoch, r.best.epoch);
  EXPECT_EQ(back.val_loss, r.best.val_loss);
  for (const auto& ex : make_examples(toy.val, toy.store, back.model)) {
    const auto a = predict(r.best.params, r.best.model, ex.embeddings, ex.entity_types);
    const auto b = predict(back.params, back.model, ex.embeddings, ex.entity_types);
    EXPECT_EQ(a.probs, b.probs);
  }
  const std::string bytes = test::read_bytes(dir.file("m.ckpt"));
  EXPECT_NE(bytes.find("\n---TENSORS---\n"), std::string::npos);
}

TEST(Checkpoint, CorruptionAndCompatibilityErrors) {
  Checkpoint ckpt;
  ckpt.model = make_model_config(SchemeVariant::NER, 8);
  ckpt.train.model = ckpt.model;
  ckpt.params = init_params(ckpt.model, 1);
  ckpt.epoch = 1;
  ckpt.val_loss = 0.5;
  const std::string good = serialize_checkpoint(ckpt);
  EXPECT_EQ(parse_checkpoint(good).params, ckpt.params);

  try {
    parse_checkpoint(good.substr(0, good.size() - 16));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt"), std::string::npos);
  }

  std::string reordered = good;
  const auto pos = reordered.find("PER,ORG");
  reordered.replace(pos, 7, "ORG,PER");
  try {
    parse_checkpoint(reordered);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("tag ordering"), std::string::npos);
  }

  std::string versioned = good;
  versioned.replace(versioned.find("\"format_version\": 1"), 19, "\"format_version\": 2");
  EXPECT_THROW(parse_checkpoint(versioned), Error);

  EXPECT_THROW(parse_checkpoint("{}"), Error);
}
