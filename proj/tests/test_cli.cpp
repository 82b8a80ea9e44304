// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>

#include "exclaim/exclaim.hpp"
#include "test_util.hpp"

using namespace exclaim;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run(const test::TempDir& dir, const std::string& args) {
  const auto out = dir.file("stdout.txt"), err = dir.file("stderr.txt");
  const std::string cmd = std::string(EXCLAIM_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = test::read_bytes(out);
  r.err = test::read_bytes(err);
  return r;
}

/// Generates a small corpus with splits and writes a toy run config.
void setup_toy(const test::TempDir& dir, const std::string& scheme = "EXN", double lr = 1e-2) {
  test::write_text(dir.file("gen.json"), R"({"rule":{"kind":"ENTITY_PRESENCE","tag":"DIS"},"n_instances":30,
    "min_len":3,"max_len":6,"d_w":8,"seed":5,"splits":{"train":20,"val":5,"test":5},"pairing":{"languages":2}})");
  ASSERT_EQ(run(dir, "generate --spec " + dir.file("gen.json") + " --out-dir " + dir.file("data")).exit_code, 0);
  nlohmann::json cfg = {{"train_data", "data/train.jsonl"},
                        {"val_data", "data/val.jsonl"},
                        {"store", "data/store.bin"},
                        {"training",
                         {{"learning_rate", lr},
                          {"epochs", 3},
                          {"batch_size", 4},
                          {"seed", 11},
                          {"model", {{"scheme", scheme}, {"d_w", 8}, {"d_p", 6}, {"d_e", 4}}}}}};
  test::write_text(dir.file("run.json"), cfg.dump(2));
}

}  // namespace

TEST(Cli, TrainWritesCheckpointAndHistoryDeterministically) {
  test::TempDir dir;
  setup_toy(dir);
  const auto r1 = run(dir, "train --config " + dir.file("run.json") + " --out " + dir.file("a.ckpt"));
  ASSERT_EQ(r1.exit_code, 0) << r1.err;
  EXPECT_NE(r1.out.find("epoch 3"), std::string::npos);
  const auto hist = nlohmann::json::parse(test::read_bytes(dir.file("a.ckpt.history.json")));
  EXPECT_EQ(hist["epochs"].size(), 3u);
  ASSERT_EQ(run(dir, "train --config " + dir.file("run.json") + " --out " + dir.file("b.ckpt")).exit_code, 0);
  EXPECT_EQ(test::read_bytes(dir.file("a.ckpt")), test::read_bytes(dir.file("b.ckpt")));
  EXPECT_NO_THROW(load_checkpoint(dir.file("a.ckpt")));
}

TEST(Cli, NonPositiveLearningRateExitsWithConfigCode) {
  test::TempDir dir;
  setup_toy(dir, "EXN", 0.0);
  const auto r = run(dir, "train --config " + dir.file("run.json") + " --out " + dir.file("x.ckpt"));
  EXPECT_EQ(r.exit_code, 2);
  const auto line = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
  EXPECT_EQ(line["code"], 2);
  EXPECT_EQ(line["error"], "config");
  EXPECT_NE(line["message"].get<std::string>().find("learning_rate"), std::string::npos);
  // Flags override config keys.
  const auto fixed = run(dir, "train --config " + dir.file("run.json") + " --lr 0.01 --epochs 1 --out " +
                                  dir.file("y.ckpt"));
  EXPECT_EQ(fixed.exit_code, 0) << fixed.err;
}

TEST(Cli, UnknownConfigKeyAndMissingPaths) {
  test::TempDir dir;
  test::write_text(dir.file("run.json"), R"({"training":{"lr":1}})");
  EXPECT_EQ(run(dir, "train --config " + dir.file("run.json") + " --out " + dir.file("x")).exit_code, 2);
  test::write_text(dir.file("run.json"), R"({"train_data":"nope.jsonl"})");
  EXPECT_EQ(run(dir, "train --config " + dir.file("run.json") + " --out " + dir.file("x")).exit_code, 2);
  EXPECT_EQ(run(dir, "frobnicate").exit_code, 2);
}

TEST(Cli, PredictEvalEntropyExport) {
  test::TempDir dir;
  setup_toy(dir);
  ASSERT_EQ(run(dir, "train --config " + dir.file("run.json") + " --out " + dir.file("m.ckpt")).exit_code, 0);
  const auto p = run(dir, "predict --model " + dir.file("m.ckpt") + " --data " + dir.file("data/test.jsonl") +
                              " --store " + dir.file("data/store.bin") + " --out " + dir.file("p.jsonl"));
  ASSERT_EQ(p.exit_code, 0) << p.err;
  const auto recs = load_predictions(dir.file("p.jsonl"));
  const auto test_set = load_dataset(dir.file("data/test.jsonl"));
  ASSERT_EQ(recs.size(), 5u);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].id, test_set.instances[i].id);
    EXPECT_GE(recs[i].prob, 0.0);
    EXPECT_LE(recs[i].prob, 1.0);
  }

  const auto e = run(dir, "eval --preds " + dir.file("p.jsonl") + " --out " + dir.file("r.json"));
  ASSERT_EQ(e.exit_code, 0) << e.err;
  EXPECT_NO_THROW(nlohmann::json::parse(test::read_bytes(dir.file("r.json"))));

  const auto h = run(dir, "analyze entropy --model " + dir.file("m.ckpt") + " --data " +
                              dir.file("data/test.jsonl") + " --store " + dir.file("data/store.bin") + " --out " +
                              dir.file("h.json"));
  ASSERT_EQ(h.exit_code, 0) << h.err;
  EXPECT_EQ(nlohmann::json::parse(test::read_bytes(dir.file("h.json")))["per_instance"].size(), 5u);

  const auto x = run(dir, "export-embeddings --model " + dir.file("m.ckpt") + " --out " + dir.file("ee.csv"));
  ASSERT_EQ(x.exit_code, 0) << x.err;
  const auto rows = read_entity_embeddings(dir.file("ee.csv"));
  EXPECT_EQ(rows.size(), 16u);

  const auto c = run(dir, "analyze correlation --preds " + dir.file("p.jsonl") + " --data " +
                              dir.file("data/test.jsonl") + " --out " + dir.file("c.csv"));
  EXPECT_EQ(c.exit_code, 0) << c.err;
}

TEST(Cli, PredictUnknownIdNamesIt) {
  test::TempDir dir;
  setup_toy(dir);
  ASSERT_EQ(run(dir, "train --config " + dir.file("run.json") + " --epochs 1 --out " + dir.file("m.ckpt")).exit_code,
            0);
  test::write_text(dir.file("odd.jsonl"),
                   R"({"id":"ghost-17","lang":"en","tokens":["a"],"ner_tags":["O"],"el_logprobs":[null],"label":0})"
                   "\n");
  const auto r = run(dir, "predict --model " + dir.file("m.ckpt") + " --data " + dir.file("odd.jsonl") +
                              " --store " + dir.file("data/store.bin") + " --out " + dir.file("p.jsonl"));
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.err.find("ghost-17"), std::string::npos);
}

TEST(Cli, PopularityModelWarnsOnUnlinkedEntities) {
  test::TempDir dir;
  setup_toy(dir, "EXP");
  ASSERT_EQ(run(dir, "train --config " + dir.file("run.json") + " --epochs 1 --out " + dir.file("m.ckpt")).exit_code,
            0);
  // Strip every el_logprob from the test split.
  auto ds = load_dataset(dir.file("data/test.jsonl"));
  for (auto& inst : ds.instances)
    for (auto& lp : inst.el_logprobs) lp.reset();
  write_dataset(ds, dir.file("bare.jsonl"));
  const auto r = run(dir, "predict --model " + dir.file("m.ckpt") + " --data " + dir.file("bare.jsonl") +
                              " --store " + dir.file("data/store.bin") + " --out " + dir.file("p.jsonl"));
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.err.find("warning:"), std::string::npos);
  EXPECT_EQ(load_predictions(dir.file("p.jsonl")).size(), 5u);
}

TEST(Cli, EvalAndTransferOnHandExamples) {
  test::TempDir dir;
  test::write_text(dir.file("p.jsonl"),
                   R"({"id":"a","lang":"en","pred":1,"prob":0.9,"gold":1}
{"id":"b","lang":"en","pred":0,"prob":0.2,"gold":1}
{"id":"c","lang":"en","pred":1,"prob":0.7,"gold":0}
{"id":"d","lang":"en","pred":0,"prob":0.1,"gold":0}
)");
  ASSERT_EQ(run(dir, "eval --preds " + dir.file("p.jsonl") + " --out " + dir.file("r.json")).exit_code, 0);
  const auto rep = nlohmann::json::parse(test::read_bytes(dir.file("r.json")));
  EXPECT_EQ(rep["overall"]["f1"].get<double>(), 0.5);

  // a,d correct; b,c wrong. Translations agree for a and b only.
  test::write_text(dir.file("s.jsonl"),
                   R"({"id":"ta","lang":"de","pred":1,"prob":0.9,"gold":1}
{"id":"tb","lang":"de","pred":0,"prob":0.2,"gold":1}
{"id":"tc","lang":"de","pred":0,"prob":0.3,"gold":0}
{"id":"td","lang":"de","pred":1,"prob":0.6,"gold":0}
)");
  test::write_text(dir.file("pairs.jsonl"),
                   R"({"original_id":"a","translated_id":"ta","lang":"de"}
{"original_id":"b","translated_id":"tb","lang":"de"}
{"original_id":"c","translated_id":"tc","lang":"de"}
{"original_id":"d","translated_id":"td","lang":"de"}
)");
  ASSERT_EQ(run(dir, "analyze transfer --orig " + dir.file("p.jsonl") + " --synth " + dir.file("s.jsonl") +
                         " --pairs " + dir.file("pairs.jsonl") + " --out " + dir.file("t.json"))
                .exit_code,
            0);
  const auto t = nlohmann::json::parse(test::read_bytes(dir.file("t.json")));
  EXPECT_EQ(t["pooled"]["correct_rate"].get<double>(), 0.5);
  EXPECT_EQ(t["pooled"]["wrong_rate"].get<double>(), 0.5);
}

TEST(Cli, GenerateIsIdempotent) {
  test::TempDir dir;
  test::write_text(dir.file("gen.json"), R"({"n_instances":20,"d_w":8,"seed":3,"pairing":{"languages":2}})");
  ASSERT_EQ(run(dir, "generate --spec " + dir.file("gen.json") + " --out-dir " + dir.file("a")).exit_code, 0);
  ASSERT_EQ(run(dir, "generate --spec " + dir.file("gen.json") + " --out-dir " + dir.file("b")).exit_code, 0);
  for (const char* f : {"corpus.jsonl", "translations.jsonl", "pairs.jsonl", "store.bin", "store.bin.index.jsonl"})
    EXPECT_EQ(test::read_bytes(dir.file(std::string("a/") + f)), test::read_bytes(dir.file(std::string("b/") + f)))
        << f;
  EXPECT_EQ(load_pairing(dir.file("a/pairs.jsonl")).pairs.size(), 40u);
}
