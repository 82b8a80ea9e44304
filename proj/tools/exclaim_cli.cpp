// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train, predict, eval, analyze, export-embeddings
// and generate.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "exclaim/exclaim.hpp"

namespace fs = std::filesystem;
using namespace exclaim;

namespace {

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  std::string train_data;
  std::string val_data;
  std::string test_data;
  std::string store;
  std::string history;  // defaults to <checkpoint>.history.json
  TrainConfig training;
};

std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

nlohmann::json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) fail_config(std::string("cannot open ") + what + " '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail_config(std::string("malformed ") + what + " '" + path + "': " + e.what());
  }
}

/// Relative paths inside the file resolve against its directory.
RunConfig load_run_config(const std::string& path) {
  const auto j = read_json_file(path, "run config");
  if (!j.is_object()) fail_config("run config must be a JSON object");
  detail::reject_unknown(j, {"train_data", "val_data", "test_data", "store", "history", "training"}, "run config");
  RunConfig rc;
  detail::read_opt(j, "train_data", rc.train_data, "run config");
  detail::read_opt(j, "val_data", rc.val_data, "run config");
  detail::read_opt(j, "test_data", rc.test_data, "run config");
  detail::read_opt(j, "store", rc.store, "run config");
  detail::read_opt(j, "history", rc.history, "run config");
  if (auto it = j.find("training"); it != j.end()) rc.training = train_config_from_json(*it);
  const fs::path base = fs::path(path).parent_path();
  for (auto* p : {&rc.train_data, &rc.val_data, &rc.test_data, &rc.store, &rc.history}) *p = resolve(base, *p);
  return rc;
}

void require_file(const std::string& path, const char* role) {
  if (path.empty()) fail_config(std::string("no ") + role + " path given");
  if (!fs::exists(path)) fail_config(std::string(role) + " '" + path + "' does not exist");
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_data("cannot write '" + path + "'");
  out << text;
  if (!out) fail_data("write failed for '" + path + "'");
}

Dataset load_logged(const std::string& path, std::size_t max_len) {
  LoadStats stats;
  Dataset ds = load_dataset(path, max_len, &stats);
  std::cerr << "loaded " << ds.size() << " instances from " << path;
  if (stats.truncated) std::cerr << " (" << stats.truncated << " truncated to " << max_len << " tokens)";
  std::cerr << '\n';
  return ds;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string rate(std::optional<double> v) { return v ? fixed(*v) : "n/a"; }

// ---------------------------------------------------------------------------
// Commands

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
  std::string store;
  std::string history;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (a.lr) rc.training.learning_rate = *a.lr;
  if (a.epochs) rc.training.epochs = *a.epochs;
  if (a.batch_size) rc.training.batch_size = *a.batch_size;
  if (a.seed) rc.training.seed = *a.seed;
  if (!a.store.empty()) rc.store = a.store;
  if (!a.history.empty()) rc.history = a.history;
  rc.training.validate();
  require_file(rc.train_data, "train_data");
  require_file(rc.val_data, "val_data");
  require_file(rc.store, "store");

  const auto store = open_store(rc.store);
  const Dataset train_set = load_logged(rc.train_data, rc.training.max_len);
  const Dataset val_set = load_logged(rc.val_data, rc.training.max_len);

  TrainOptions opts;
  opts.threads = default_threads();
  opts.on_epoch = [](const EpochRecord& r) {
    std::cout << "epoch " << r.epoch << "  train_loss " << fixed(r.train_loss, 6) << "  val_loss "
              << fixed(r.val_loss, 6) << "  val_acc " << fixed(r.val_accuracy) << std::endl;
  };
  const TrainResult result = train(train_set, val_set, store, rc.training, opts);
  save_checkpoint(result.best, a.out);
  const std::string history = rc.history.empty() ? a.out + ".history.json" : rc.history;
  write_text_file(history, to_json(result.history).dump(2) + "\n");
  std::cout << "best epoch " << result.best.epoch << " (val_loss " << fixed(result.best.val_loss, 6) << ") -> "
            << a.out << '\n';
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& data, const std::string& store_path,
                const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(model_path);
  const auto store = open_store(store_path);
  const Dataset ds = load_logged(data, ckpt.train.max_len);

  if (ckpt.model.scheme.variant == SchemeVariant::NER_POPULARITY) {
    std::size_t unlinked = 0;
    for (const auto& inst : ds.instances)
      for (std::size_t i = 0; i < inst.size(); ++i)
        if (inst.ner_tags[i] != NerTag::O && !inst.el_logprobs[i]) ++unlinked;
    if (unlinked)
      std::cerr << "warning: " << unlinked << " entity tokens have no el_logprob and are treated as unpopular\n";
  }

  std::vector<PredictionRecord> records(ds.size());
  parallel_for(ds.size(), default_threads(), [&](std::size_t i) {
    const auto& inst = ds.instances[i];
    const Example ex = make_example(inst, store, ckpt.model);
    const auto p = predict(ckpt.params, ckpt.model, ex.embeddings, ex.entity_types);
    records[i] = {inst.id, inst.lang, static_cast<int>(p.label), p.probs[1], inst.label};
  });
  write_predictions(records, out);
  std::cout << "wrote " << records.size() << " predictions to " << out << '\n';
  return 0;
}

int cmd_eval(const std::string& preds, const std::string& out, bool support_weighted) {
  const auto records = load_predictions(preds);
  const auto report = aggregate(language_reports(records), support_weighted);
  write_text_file(out, to_json(report).dump(2) + "\n");
  std::cout << std::left << std::setw(10) << "lang" << std::setw(9) << "support" << std::setw(9) << "acc"
            << std::setw(9) << "prec" << std::setw(9) << "rec" << "f1\n";
  for (const auto& r : report.languages)
    std::cout << std::setw(10) << r.lang << std::setw(9) << r.support << std::setw(9) << fixed(r.accuracy)
              << std::setw(9) << fixed(r.precision) << std::setw(9) << fixed(r.recall) << fixed(r.f1) << '\n';
  std::cout << std::setw(19) << (support_weighted ? "weighted" : "mean") << std::setw(9) << fixed(report.accuracy)
            << std::setw(9) << fixed(report.precision) << std::setw(9) << fixed(report.recall) << fixed(report.f1)
            << '\n';
  return 0;
}

int cmd_transfer(const std::string& orig, const std::string& synth, const std::string& pairs, const std::string& out) {
  const auto rep = transfer_rates(load_predictions(orig), load_predictions(synth), load_pairing(pairs));
  if (!out.empty()) write_text_file(out, to_json(rep).dump(2) + "\n");
  std::cout << std::left << std::setw(10) << "lang" << std::setw(8) << "pairs" << std::setw(14) << "correct_rate"
            << "wrong_rate\n";
  auto row = [](const std::string& name, const TransferStats& s) {
    std::cout << std::setw(10) << name << std::setw(8) << s.total() << std::setw(14) << rate(s.correct_rate())
              << rate(s.wrong_rate()) << '\n';
  };
  for (const auto& [lang, s] : rep.per_language) row(lang, s);
  row("pooled", rep.pooled);
  return 0;
}

int cmd_entropy(const std::string& model_path, const std::string& data, const std::string& store_path,
                const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(model_path);
  const auto store = open_store(store_path);
  const Dataset ds = load_logged(data, ckpt.train.max_len);
  const auto rep = attention_entropy(ckpt.params, ckpt.model, ds, store, default_threads());
  if (!out.empty()) write_text_file(out, to_json(rep).dump(2) + "\n");
  std::cout << "instances " << ds.size() << "  mean attention entropy " << fixed(rep.mean, 6) << " nats\n";
  return 0;
}

int cmd_correlation(const std::string& preds, const std::string& data, const std::string& out, double threshold) {
  const Dataset ds = load_logged(data, kDefaultMaxLen);
  const auto m = confusion_feature_correlation(ds, load_predictions(preds), threshold);
  const std::string csv = to_csv(m);
  if (!out.empty()) write_text_file(out, csv);
  std::cout << std::left << std::setw(8) << "outcome";
  for (std::size_t f = 0; f < 5; ++f)
    std::cout << std::setw(20) << (std::string(m.kFeatures[f]) + (m.kExtension[f] ? "(ext)" : ""));
  std::cout << '\n';
  for (std::size_t o = 0; o < 4; ++o) {
    std::cout << std::setw(8) << m.kOutcomes[o];
    for (std::size_t f = 0; f < 5; ++f) std::cout << std::setw(20) << rate(m.r[o][f]);
    std::cout << '\n';
  }
  return 0;
}

int cmd_export(const std::string& model_path, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(model_path);
  export_entity_embeddings(ckpt, out);
  std::cout << "wrote " << ckpt.params.entity_table.rows << " entity type vectors of width "
            << ckpt.params.entity_table.cols << " to " << out << '\n';
  return 0;
}

/// Keys in the generator file beyond GenSpec: "splits" {"train","val","test"}
/// sizes taken in that order, and "pairing" {"languages", "seed"} applied to
/// the test split (or the whole corpus without splits).
int cmd_generate(const std::string& spec_path, const std::string& out_dir) {
  const auto j = read_json_file(spec_path, "generator spec");
  if (!j.is_object()) fail_config("generator spec must be a JSON object");
  const GenSpec spec = gen_spec_from_json(j);

  std::vector<std::pair<std::string, std::size_t>> splits;
  if (auto it = j.find("splits"); it != j.end()) {
    detail::reject_unknown(*it, {"train", "val", "test"}, "splits");
    for (const char* name : {"train", "val", "test"}) {
      std::size_t n = 0;
      detail::read_opt(*it, name, n, "splits");
      if (it->contains(name)) splits.emplace_back(name, n);
    }
  }
  std::optional<std::pair<std::size_t, std::uint64_t>> pairing;
  if (auto it = j.find("pairing"); it != j.end()) {
    detail::reject_unknown(*it, {"languages", "seed"}, "pairing");
    std::size_t langs = 1;
    std::uint64_t seed = spec.seed;
    detail::read_opt(*it, "languages", langs, "pairing");
    detail::read_opt(*it, "seed", seed, "pairing");
    if (langs < 1) fail_config("pairing: languages must be >= 1");
    pairing.emplace(langs, seed);
  }

  const GeneratedCorpus gen = generate(spec);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_dataset(gen.dataset, (dir / "corpus.jsonl").string());

  Dataset pair_base = gen.dataset;
  if (!splits.empty()) {
    std::vector<std::size_t> sizes;
    for (const auto& [name, n] : splits) sizes.push_back(n);
    const auto parts = split_dataset(gen.dataset, sizes);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      write_dataset(parts[i], (dir / (splits[i].first + ".jsonl")).string());
      if (splits[i].first == "test") pair_base = parts[i];
    }
  }

  auto entries = gen.embeddings;
  if (pairing) {
    const auto pr = generate_pairing(pair_base, pairing->first, pairing->second);
    write_dataset(pr.translations, (dir / "translations.jsonl").string());
    write_pairing(pr.pairs, (dir / "pairs.jsonl").string());
    const auto extra = embed_dataset(pr.translations, spec.d_w, spec.seed);
    entries.insert(entries.end(), extra.begin(), extra.end());
  }
  write_store(entries, (dir / "store.bin").string(), spec.d_w);

  std::size_t positives = 0;
  for (const auto& inst : gen.dataset.instances) positives += inst.label == 1;
  std::cout << "generated " << gen.dataset.size() << " instances (" << positives << " positive), "
            << entries.size() << " embedding entries in " << out_dir << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

std::string json_escape_line(const std::string& kind, int code, const std::string& message) {
  return nlohmann::json{{"error", kind}, {"code", code}, {"message", message}}.dump();
}

int report(const std::string& kind, int code, const std::string& message) {
  std::cerr << json_escape_line(kind, code, message) << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exclaim: entity-aware claim detection"};
  app.require_subcommand(1);
  int status = 0;

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
  train_cmd->add_option("--config", ta.config, "Run config JSON")->required();
  train_cmd->add_option("--out", ta.out, "Checkpoint output path")->required();
  train_cmd->add_option("--lr", ta.lr, "Override learning_rate");
  train_cmd->add_option("--epochs", ta.epochs, "Override epochs");
  train_cmd->add_option("--batch-size", ta.batch_size, "Override batch_size");
  train_cmd->add_option("--seed", ta.seed, "Override seed");
  train_cmd->add_option("--store", ta.store, "Override store path");
  train_cmd->add_option("--history", ta.history, "History JSON output path");
  train_cmd->callback([&] { status = cmd_train(ta); });

  std::string model, data, store, out, preds, orig, synth, pairs, spec;
  bool weighted = false;
  double threshold = kDefaultElThreshold;

  auto* predict_cmd = app.add_subcommand("predict", "Write per-instance predictions");
  predict_cmd->add_option("--model", model)->required();
  predict_cmd->add_option("--data", data)->required();
  predict_cmd->add_option("--store", store)->required();
  predict_cmd->add_option("--out", out)->required();
  predict_cmd->callback([&] { status = cmd_predict(model, data, store, out); });

  auto* eval_cmd = app.add_subcommand("eval", "Per-language and aggregate weighted metrics");
  eval_cmd->add_option("--preds", preds)->required();
  eval_cmd->add_option("--out", out)->required();
  eval_cmd->add_flag("--support-weighted", weighted, "Weight the aggregate by language support");
  eval_cmd->callback([&] { status = cmd_eval(preds, out, weighted); });

  auto* analyze_cmd = app.add_subcommand("analyze", "Transfer, entropy and correlation analyses");
  analyze_cmd->require_subcommand(1);
  auto* transfer_cmd = analyze_cmd->add_subcommand("transfer", "Cross-lingual transfer rates");
  transfer_cmd->add_option("--orig", orig)->required();
  transfer_cmd->add_option("--synth", synth)->required();
  transfer_cmd->add_option("--pairs", pairs)->required();
  transfer_cmd->add_option("--out", out);
  transfer_cmd->callback([&] { status = cmd_transfer(orig, synth, pairs, out); });
  auto* entropy_cmd = analyze_cmd->add_subcommand("entropy", "Mean attention entropy");
  entropy_cmd->add_option("--model", model)->required();
  entropy_cmd->add_option("--data", data)->required();
  entropy_cmd->add_option("--store", store)->required();
  entropy_cmd->add_option("--out", out);
  entropy_cmd->callback([&] { status = cmd_entropy(model, data, store, out); });
  auto* corr_cmd = analyze_cmd->add_subcommand("correlation", "Outcome / feature correlations");
  corr_cmd->add_option("--preds", preds)->required();
  corr_cmd->add_option("--data", data)->required();
  corr_cmd->add_option("--out", out);
  corr_cmd->add_option("--el-threshold", threshold);
  corr_cmd->callback([&] { status = cmd_correlation(preds, data, out, threshold); });

  auto* export_cmd = app.add_subcommand("export-embeddings", "Write the entity embedding table as CSV");
  export_cmd->add_option("--model", model)->required();
  export_cmd->add_option("--out", out)->required();
  export_cmd->callback([&] { status = cmd_export(model, out); });

  auto* gen_cmd = app.add_subcommand("generate", "Generate a synthetic corpus and store");
  gen_cmd->add_option("--spec", spec)->required();
  gen_cmd->add_option("--out-dir", out)->required();
  gen_cmd->callback([&] { status = cmd_generate(spec, out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("config", 2, e.what());
  } catch (const Error& e) {
    return report(std::string(to_string(e.code())), static_cast<int>(e.code()), e.what());
  } catch (const std::exception& e) {
    return report("data", static_cast<int>(ErrorCode::Data), e.what());
  }
  return status;
}
