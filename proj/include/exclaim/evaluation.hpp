// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation and analysis:
//  - per-language support-weighted precision/recall/F1, averaged across languages
//  - prediction consistency between original and translated instances
//  - attention entropy
//  - correlation of confusion outcomes with instance features
//  - entity-type embedding export

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "exclaim/corpus.hpp"
#include "exclaim/embeddings.hpp"
#include "exclaim/error.hpp"
#include "exclaim/model.hpp"
#include "exclaim/parallel.hpp"
#include "exclaim/training.hpp"

namespace exclaim {

struct PredictionRecord {
  std::string id;
  std::string lang;
  int pred = 0;
  double prob = 0.0;  // probability of class 1
  int gold = 0;
  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

inline nlohmann::json to_json(const PredictionRecord& r) {
  return {{"id", r.id}, {"lang", r.lang}, {"pred", r.pred}, {"prob", r.prob}, {"gold", r.gold}};
}

inline PredictionRecord parse_prediction(const std::string& line, std::size_t line_no = 0) {
  const std::string at = line_no ? "line " + std::to_string(line_no) + ": " : std::string();
  try {
    const auto j = nlohmann::json::parse(line);
    PredictionRecord r{j.at("id").get<std::string>(), j.at("lang").get<std::string>(), j.at("pred").get<int>(),
                       j.at("prob").get<double>(), j.at("gold").get<int>()};
    if (r.pred < 0 || r.pred > 1 || r.gold < 0 || r.gold > 1) fail_data(at + "pred/gold outside {0,1}");
    if (!(r.prob >= 0.0 && r.prob <= 1.0)) fail_data(at + "prob outside [0,1]");
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail_data(at + "bad prediction record: " + e.what());
  }
}

inline std::vector<PredictionRecord> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open predictions '" + path + "'");
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_prediction(line, line_no));
  }
  return out;
}

inline void write_predictions(const std::vector<PredictionRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_data("cannot write predictions '" + path + "'");
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Weighted metrics

struct LanguageReport {
  std::string lang;
  std::size_t support = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;  // class 1 is positive
};

struct EvalReport {
  std::vector<LanguageReport> languages;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool support_weighted = false;
};

namespace detail {

inline double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline double f1_score(double p, double r) { return safe_div(2.0 * p * r, p + r); }

}  // namespace detail

/// Metrics for one language. Per-class precision/recall/F1 with a zero
/// denominator count as 0; the weighted value sums class metrics weighted by
/// gold support.
inline LanguageReport weighted_metrics(const std::vector<PredictionRecord>& records) {
  if (records.empty()) fail_data("weighted_metrics: no records");
  LanguageReport r;
  r.lang = records.front().lang;
  for (const auto& rec : records) {
    if (rec.lang != r.lang) fail_data("weighted_metrics: records mix languages '" + r.lang + "' and '" + rec.lang + "'");
    if (rec.gold == 1) (rec.pred == 1 ? r.tp : r.fn)++;
    else (rec.pred == 1 ? r.fp : r.tn)++;
  }
  r.support = records.size();
  const double n = static_cast<double>(r.support);
  const double tp = static_cast<double>(r.tp), fp = static_cast<double>(r.fp);
  const double tn = static_cast<double>(r.tn), fn = static_cast<double>(r.fn);

  const double p1 = detail::safe_div(tp, tp + fp), r1 = detail::safe_div(tp, tp + fn);
  const double p0 = detail::safe_div(tn, tn + fn), r0 = detail::safe_div(tn, tn + fp);
  const double w1 = (tp + fn) / n, w0 = (tn + fp) / n;

  r.accuracy = (tp + tn) / n;
  r.precision = w0 * p0 + w1 * p1;
  r.recall = w0 * r0 + w1 * r1;
  r.f1 = w0 * detail::f1_score(p0, r0) + w1 * detail::f1_score(p1, r1);
  return r;
}

/// One report per language, ordered by language code.
inline std::vector<LanguageReport> language_reports(const std::vector<PredictionRecord>& records) {
  std::map<std::string, std::vector<PredictionRecord>> by_lang;
  for (const auto& r : records) by_lang[r.lang].push_back(r);
  std::vector<LanguageReport> out;
  for (const auto& [lang, recs] : by_lang) out.push_back(weighted_metrics(recs));
  return out;
}

/// Overall metrics as the plain mean over languages, or support-weighted when asked.
inline EvalReport aggregate(const std::vector<LanguageReport>& reports, bool support_weighted = false) {
  if (reports.empty()) fail_data("aggregate: no language reports");
  EvalReport e;
  e.languages = reports;
  e.support_weighted = support_weighted;
  double total = 0.0;
  for (const auto& r : reports) {
    const double w = support_weighted ? static_cast<double>(r.support) : 1.0;
    e.accuracy += w * r.accuracy;
    e.precision += w * r.precision;
    e.recall += w * r.recall;
    e.f1 += w * r.f1;
    total += w;
  }
  e.accuracy /= total;
  e.precision /= total;
  e.recall /= total;
  e.f1 /= total;
  return e;
}

inline nlohmann::json to_json(const LanguageReport& r) {
  return {{"lang", r.lang},           {"support", r.support}, {"accuracy", r.accuracy}, {"precision", r.precision},
          {"recall", r.recall},       {"f1", r.f1},           {"tp", r.tp},             {"fp", r.fp},
          {"tn", r.tn},               {"fn", r.fn}};
}

inline nlohmann::json to_json(const EvalReport& e) {
  nlohmann::json langs = nlohmann::json::array();
  for (const auto& r : e.languages) langs.push_back(to_json(r));
  return {{"languages", langs},
          {"overall", {{"accuracy", e.accuracy}, {"precision", e.precision}, {"recall", e.recall}, {"f1", e.f1}}},
          {"overall_pooling", e.support_weighted ? "support_weighted" : "unweighted_language_mean"},
          {"zero_division", 0}};
}

// ---------------------------------------------------------------------------
// Transfer rates

struct TransferStats {
  std::size_t correct_pairs = 0;  // original predicted correctly
  std::size_t correct_agree = 0;  // ... and translation got the same prediction
  std::size_t wrong_pairs = 0;
  std::size_t wrong_agree = 0;

  std::optional<double> correct_rate() const {
    if (correct_pairs == 0) return std::nullopt;
    return static_cast<double>(correct_agree) / static_cast<double>(correct_pairs);
  }
  std::optional<double> wrong_rate() const {
    if (wrong_pairs == 0) return std::nullopt;
    return static_cast<double>(wrong_agree) / static_cast<double>(wrong_pairs);
  }
  std::size_t total() const { return correct_pairs + wrong_pairs; }
};

struct TransferReport {
  std::map<std::string, TransferStats> per_language;
  TransferStats pooled;
};

inline TransferReport transfer_rates(const std::vector<PredictionRecord>& original,
                                     const std::vector<PredictionRecord>& translated, const PairingTable& pairs) {
  std::unordered_map<std::string, const PredictionRecord*> orig, synth;
  for (const auto& r : original) orig[r.id] = &r;
  for (const auto& r : translated) synth[r.id] = &r;
  TransferReport rep;
  for (const auto& p : pairs.pairs) {
    auto o = orig.find(p.original_id);
    auto s = synth.find(p.translated_id);
    if (o == orig.end()) fail_data("transfer_rates: no prediction for original '" + p.original_id + "'");
    if (s == synth.end()) fail_data("transfer_rates: no prediction for translation '" + p.translated_id + "'");
    const bool correct = o->second->pred == o->second->gold;
    const bool agree = s->second->pred == o->second->pred;
    for (TransferStats* st : {&rep.per_language[p.lang], &rep.pooled}) {
      if (correct) {
        ++st->correct_pairs;
        st->correct_agree += agree;
      } else {
        ++st->wrong_pairs;
        st->wrong_agree += agree;
      }
    }
  }
  return rep;
}

inline nlohmann::json to_json(const TransferStats& s) {
  auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  return {{"correct_rate", opt(s.correct_rate())}, {"wrong_rate", opt(s.wrong_rate())},
          {"correct_pairs", s.correct_pairs},     {"wrong_pairs", s.wrong_pairs},
          {"correct_agree", s.correct_agree},     {"wrong_agree", s.wrong_agree}};
}

inline nlohmann::json to_json(const TransferReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [lang, s] : r.per_language) per[lang] = to_json(s);
  return {{"per_language", per}, {"pooled", to_json(r.pooled)}};
}

// ---------------------------------------------------------------------------
// Attention entropy

/// Mean over rows of the Shannon entropy (nats) of each attention row.
/// 0 * ln 0 is taken as 0.
inline double attention_entropy(const Matrix& attention) {
  if (attention.rows == 0) fail_data("attention_entropy: empty attention matrix");
  double total = 0.0;
  for (std::size_t i = 0; i < attention.rows; ++i) {
    double h = 0.0;
    for (double a : attention.row(i))
      if (a > 0.0) h -= a * std::log(a);
    total += h;
  }
  return total / static_cast<double>(attention.rows);
}

struct EntropyReport {
  double mean = 0.0;
  std::vector<std::pair<std::string, double>> per_instance;
};

template <EmbeddingSource Source>
EntropyReport attention_entropy(const ModelParams& params, const ModelConfig& model, const Dataset& ds,
                                const Source& source, unsigned threads = 1) {
  if (!model.use_attention) fail_config("attention_entropy: model has no attention layer");
  if (ds.empty()) fail_data("attention_entropy: empty dataset");
  EntropyReport rep;
  rep.per_instance.resize(ds.size());
  parallel_for(ds.size(), threads, [&](std::size_t i) {
    const auto& inst = ds.instances[i];
    const Example ex = make_example(inst, source, model);
    const auto trace = forward(params, model, ex.embeddings, ex.entity_types);
    rep.per_instance[i] = {inst.id, attention_entropy(trace.attention)};
  });
  for (const auto& [id, h] : rep.per_instance) rep.mean += h;
  rep.mean /= static_cast<double>(ds.size());
  return rep;
}

inline nlohmann::json to_json(const EntropyReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& [id, h] : r.per_instance) per.push_back({{"id", id}, {"entropy", h}});
  return {{"mean_entropy", r.mean}, {"log_base", "e"}, {"aggregation", "row_entropy_mean_per_instance"},
          {"per_instance", per}};
}

// ---------------------------------------------------------------------------
// Confusion / feature correlation

struct CorrelationMatrix {
  static constexpr std::array<const char*, 4> kOutcomes = {"TP", "TN", "FP", "FN"};
  static constexpr std::array<const char*, 5> kFeatures = {"length", "disease_count", "media_count",
                                                           "person_count", "popular_count"};
  /// person_count and popular_count go beyond the three features the analysis names.
  static constexpr std::array<bool, 5> kExtension = {false, false, false, true, true};

  std::array<std::array<std::optional<double>, 5>, 4> r{};
  std::size_t samples = 0;
};

/// Pearson r; nullopt if either column has zero variance.
inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

/// Records are joined to dataset instances by id.
inline CorrelationMatrix confusion_feature_correlation(const Dataset& ds, const std::vector<PredictionRecord>& records,
                                                       double el_threshold = kDefaultElThreshold) {
  if (records.size() < 2) fail_data("confusion_feature_correlation: need at least 2 records");
  std::unordered_map<std::string, const ClaimInstance*> by_id;
  for (const auto& inst : ds.instances) by_id[inst.id] = &inst;

  std::array<std::vector<double>, 4> outcome;
  std::array<std::vector<double>, 5> feature;
  for (const auto& rec : records) {
    auto it = by_id.find(rec.id);
    if (it == by_id.end()) fail_data("confusion_feature_correlation: no instance for record '" + rec.id + "'");
    const ClaimInstance& inst = *it->second;
    outcome[0].push_back(rec.gold == 1 && rec.pred == 1);
    outcome[1].push_back(rec.gold == 0 && rec.pred == 0);
    outcome[2].push_back(rec.gold == 0 && rec.pred == 1);
    outcome[3].push_back(rec.gold == 1 && rec.pred == 0);
    double dis = 0, media = 0, per = 0, popular = 0;
    for (std::size_t i = 0; i < inst.size(); ++i) {
      const NerTag tag = inst.ner_tags[i];
      dis += tag == NerTag::DIS;
      media += tag == NerTag::MEDIA;
      per += tag == NerTag::PER;
      popular += is_popular(tag, inst.el_logprobs[i], el_threshold);
    }
    feature[0].push_back(static_cast<double>(inst.size()));
    feature[1].push_back(dis);
    feature[2].push_back(media);
    feature[3].push_back(per);
    feature[4].push_back(popular);
  }
  CorrelationMatrix m;
  m.samples = records.size();
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t f = 0; f < 5; ++f) m.r[o][f] = pearson(outcome[o], feature[f]);
  return m;
}

/// CSV: header "outcome,<features>" (extensions suffixed "(ext)"); absent r is an empty cell.
inline std::string to_csv(const CorrelationMatrix& m) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "outcome";
  for (std::size_t f = 0; f < 5; ++f) out << ',' << m.kFeatures[f] << (m.kExtension[f] ? "(ext)" : "");
  out << '\n';
  for (std::size_t o = 0; o < 4; ++o) {
    out << m.kOutcomes[o];
    for (std::size_t f = 0; f < 5; ++f) {
      out << ',';
      if (m.r[o][f]) out << *m.r[o][f];
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Entity embedding export

/// CSV "type_name,dim_0,...,dim_{d_e-1}", one row per entity type in index order.
inline std::string entity_embeddings_csv(const Checkpoint& ckpt) {
  if (!ckpt.model.has_entities()) fail_config("export: checkpoint has scheme NONE and no entity embeddings");
  if (!ckpt.model.has_entity_table()) fail_config("export: checkpoint uses one-hot entities and has no EE table");
  const Matrix& ee = ckpt.params.entity_table;
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "type_name";
  for (std::size_t c = 0; c < ee.cols; ++c) out << ",dim_" << c;
  out << '\n';
  for (std::size_t r = 0; r < ee.rows; ++r) {
    out << type_name(ckpt.model.scheme.variant, static_cast<EntityTypeIndex>(r));
    for (double v : ee.row(r)) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

inline void export_entity_embeddings(const Checkpoint& ckpt, const std::string& path) {
  const std::string csv = entity_embeddings_csv(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_data("cannot write '" + path + "'");
  out << csv;
}

struct NamedVector {
  std::string name;
  std::vector<double> values;
};

inline std::vector<NamedVector> read_entity_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("type_name", 0) != 0) fail_data("'" + path + "' lacks the CSV header");
  std::vector<NamedVector> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream cells(line);
    NamedVector nv;
    std::string cell;
    std::getline(cells, nv.name, ',');
    while (std::getline(cells, cell, ',')) {
      try {
        nv.values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail_data("'" + path + "': bad number '" + cell + "'");
      }
    }
    out.push_back(std::move(nv));
  }
  return out;
}

}  // namespace exclaim
