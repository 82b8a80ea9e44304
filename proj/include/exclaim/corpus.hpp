// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0
//
// Claim instances and the JSONL corpus format:
//
//   {"id":"a1","lang":"en","tokens":[...],"label":1,"ner":[...],
//    "el_logprob":[-0.05,null],"source_id":"o1"}
//
// source_id is optional. Tokens arrive pre-tokenized.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "exclaim/entity_typing.hpp"
#include "exclaim/error.hpp"

namespace exclaim {

inline constexpr std::size_t kDefaultMaxLen = 128;
inline constexpr int kNumClasses = 2;

struct ClaimInstance {
  std::string id;
  std::string lang;
  std::vector<std::string> tokens;
  int label = 0;  // 0 = non-verifiable, 1 = verifiable
  std::vector<NerTag> ner_tags;
  std::vector<std::optional<double>> el_logprobs;
  std::optional<std::string> source_id;

  std::size_t size() const { return tokens.size(); }
  friend bool operator==(const ClaimInstance&, const ClaimInstance&) = default;
};

struct Dataset {
  std::string name;
  std::vector<ClaimInstance> instances;

  std::set<std::string> languages() const {
    std::set<std::string> out;
    for (const auto& inst : instances) out.insert(inst.lang);
    return out;
  }
  bool empty() const { return instances.empty(); }
  std::size_t size() const { return instances.size(); }
};

struct Pair {
  std::string original_id;
  std::string translated_id;
  std::string lang;
  friend bool operator==(const Pair&, const Pair&) = default;
};

struct PairingTable {
  std::vector<Pair> pairs;
};

/// Throws a data error unless the instance satisfies every corpus invariant.
inline void validate_instance(const ClaimInstance& inst, std::size_t max_len = SIZE_MAX) {
  const std::string where = "instance '" + inst.id + "': ";
  if (inst.tokens.empty()) fail_data(where + "no tokens");
  if (inst.tokens.size() > max_len) fail_data(where + "longer than " + std::to_string(max_len) + " tokens");
  if (inst.ner_tags.size() != inst.tokens.size() || inst.el_logprobs.size() != inst.tokens.size())
    fail_data(where + "length mismatch between tokens, ner and el_logprob");
  if (inst.label < 0 || inst.label >= kNumClasses) fail_data(where + "label outside {0,1}");
  for (std::size_t i = 0; i < inst.size(); ++i) {
    const auto& lp = inst.el_logprobs[i];
    if (!lp) continue;
    if (!std::isfinite(*lp) || *lp > 0.0) fail_data(where + "el_logprob > 0 at token " + std::to_string(i));
    if (inst.ner_tags[i] == NerTag::O) fail_data(where + "O token carries an el_logprob at token " + std::to_string(i));
  }
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& ctx) {
  auto it = obj.find(key);
  if (it == obj.end()) fail_data(ctx + "missing key '" + key + "'");
  return *it;
}

}  // namespace detail

/// Parses one JSONL record. `line_no` (1-based, 0 = unknown) is used in messages.
inline ClaimInstance parse_instance(const std::string& line, std::size_t line_no = 0) {
  const std::string at = line_no ? "line " + std::to_string(line_no) + ": " : std::string();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    fail_data(at + "malformed JSON: " + e.what());
  }
  if (!j.is_object()) fail_data(at + "record is not a JSON object");

  ClaimInstance inst;
  try {
    inst.id = detail::require(j, "id", at).get<std::string>();
    const std::string ctx = at + "id '" + inst.id + "': ";
    static const std::set<std::string> allowed = {"id", "lang", "tokens", "label", "ner", "el_logprob", "source_id"};
    for (const auto& [k, v] : j.items())
      if (!allowed.count(k)) fail_data(ctx + "unknown key '" + k + "'");
    inst.lang = detail::require(j, "lang", ctx).get<std::string>();
    inst.tokens = detail::require(j, "tokens", ctx).get<std::vector<std::string>>();
    const auto& label = detail::require(j, "label", ctx);
    if (!label.is_number_integer()) fail_data(ctx + "label outside {0,1}");
    const auto lv = label.get<long long>();
    if (lv != 0 && lv != 1) fail_data(ctx + "label outside {0,1}");
    inst.label = static_cast<int>(lv);

    const auto& ner = detail::require(j, "ner", ctx);
    const auto& el = detail::require(j, "el_logprob", ctx);
    if (!ner.is_array() || !el.is_array()) fail_data(ctx + "ner and el_logprob must be arrays");
    if (ner.size() != inst.tokens.size() || el.size() != inst.tokens.size())
      fail_data(ctx + "length mismatch: tokens=" + std::to_string(inst.tokens.size()) +
                " ner=" + std::to_string(ner.size()) + " el_logprob=" + std::to_string(el.size()));
    for (const auto& t : ner) {
      const auto tag = parse_tag(t.get<std::string>());
      if (!tag) fail_data(ctx + "unknown NER tag '" + t.get<std::string>() + "'");
      inst.ner_tags.push_back(*tag);
    }
    for (const auto& v : el) {
      if (v.is_null()) {
        inst.el_logprobs.emplace_back();
      } else if (v.is_number()) {
        inst.el_logprobs.emplace_back(v.get<double>());
      } else {
        fail_data(ctx + "el_logprob entries must be numbers or null");
      }
    }
    if (auto it = j.find("source_id"); it != j.end() && !it->is_null()) inst.source_id = it->get<std::string>();
  } catch (const nlohmann::json::type_error& e) {
    fail_data(at + "wrong value type: " + e.what());
  }
  try {
    validate_instance(inst);
  } catch (const Error& e) {
    fail_data(at + e.what());
  }
  return inst;
}

inline nlohmann::json to_json(const ClaimInstance& inst) {
  nlohmann::json ner = nlohmann::json::array();
  for (auto t : inst.ner_tags) ner.push_back(std::string(tag_name(t)));
  nlohmann::json el = nlohmann::json::array();
  for (const auto& v : inst.el_logprobs) el.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  nlohmann::json j = {{"id", inst.id}, {"lang", inst.lang}, {"tokens", inst.tokens},
                      {"label", inst.label}, {"ner", ner}, {"el_logprob", el}};
  if (inst.source_id) j["source_id"] = *inst.source_id;
  return j;
}

inline std::string serialize_instance(const ClaimInstance& inst) { return to_json(inst).dump(); }

/// Keeps the first max_len tokens (and parallel arrays).
inline ClaimInstance truncate_instance(ClaimInstance inst, std::size_t max_len = kDefaultMaxLen) {
  if (max_len == 0) fail_config("max_len must be >= 1");
  if (inst.tokens.size() > max_len) {
    inst.tokens.resize(max_len);
    inst.ner_tags.resize(max_len);
    inst.el_logprobs.resize(max_len);
  }
  return inst;
}

struct LoadStats {
  std::size_t truncated = 0;
};

inline Dataset load_dataset(const std::string& path, std::size_t max_len = kDefaultMaxLen,
                            LoadStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open dataset '" + path + "'");
  Dataset ds;
  ds.name = path;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  std::size_t truncated = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ClaimInstance inst = parse_instance(line, line_no);
    if (!seen.insert(inst.id).second)
      fail_data(path + ": line " + std::to_string(line_no) + ": duplicate id '" + inst.id + "'");
    if (inst.size() > max_len) ++truncated;
    ds.instances.push_back(truncate_instance(std::move(inst), max_len));
  }
  if (in.bad()) fail_data("read error on '" + path + "'");
  if (stats) stats->truncated = truncated;
  return ds;
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_data("cannot write dataset '" + path + "'");
  for (const auto& inst : ds.instances) out << serialize_instance(inst) << '\n';
  if (!out) fail_data("write error on '" + path + "'");
}

/// Pairs every translated instance with its original through source_id.
inline PairingTable build_pairing(const Dataset& original, const Dataset& translated) {
  std::unordered_set<std::string> originals;
  for (const auto& inst : original.instances) originals.insert(inst.id);
  PairingTable table;
  std::vector<std::string> dangling;
  for (const auto& t : translated.instances) {
    if (!t.source_id) fail_data("translated instance '" + t.id + "' has no source_id");
    if (!originals.count(*t.source_id)) {
      dangling.push_back(t.id + "->" + *t.source_id);
      continue;
    }
    table.pairs.push_back({*t.source_id, t.id, t.lang});
  }
  if (!dangling.empty()) {
    std::string msg = "dangling source_id reference(s):";
    for (const auto& d : dangling) msg += " " + d;
    fail_data(msg);
  }
  return table;
}

inline PairingTable load_pairing(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open pairing file '" + path + "'");
  PairingTable table;
  std::unordered_set<std::string> translated;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string at = path + ": line " + std::to_string(line_no) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      Pair p{detail::require(j, "original_id", at).get<std::string>(),
             detail::require(j, "translated_id", at).get<std::string>(),
             detail::require(j, "lang", at).get<std::string>()};
      if (!translated.insert(p.translated_id).second)
        fail_data(at + "translated_id '" + p.translated_id + "' appears twice");
      table.pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      fail_data(at + e.what());
    }
  }
  return table;
}

inline void write_pairing(const PairingTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_data("cannot write pairing file '" + path + "'");
  for (const auto& p : table.pairs)
    out << nlohmann::json{{"original_id", p.original_id}, {"translated_id", p.translated_id}, {"lang", p.lang}}.dump()
        << '\n';
}

/// Entity indices of an instance under a scheme.
inline std::vector<EntityTypeIndex> assign_indices(const EntityScheme& scheme, const ClaimInstance& inst) {
  return assign_indices(scheme, std::span<const NerTag>(inst.ner_tags),
                        std::span<const std::optional<double>>(inst.el_logprobs));
}

}  // namespace exclaim
