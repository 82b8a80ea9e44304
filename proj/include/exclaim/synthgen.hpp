// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic corpora whose labels follow a known rule over entity signals.
//
// Tokens are drawn from a per-language vocabulary independently of the label,
// and embedded with hash_embed, so the only label signal is what the rule puts
// into the NER tags and linking log-probabilities:
//
//   ENTITY_PRESENCE(tag)   label 1 iff some token carries `tag`
//   POPULARITY(tag, t)     label 1 iff some `tag` token has el_logprob >= t;
//                          both classes carry `tag` mentions, so tags alone
//                          do not separate them
//   RANDOM                 label ~ Bernoulli(positive_rate), no signal at all

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "exclaim/corpus.hpp"
#include "exclaim/embeddings.hpp"
#include "exclaim/entity_typing.hpp"
#include "exclaim/error.hpp"
#include "exclaim/json_util.hpp"
#include "exclaim/rng.hpp"

namespace exclaim {

enum class RuleKind { ENTITY_PRESENCE, POPULARITY, RANDOM };

struct LabelRule {
  RuleKind kind = RuleKind::ENTITY_PRESENCE;
  NerTag tag = NerTag::DIS;
  double threshold = kDefaultElThreshold;

  static LabelRule entity_presence(NerTag tag) { return {RuleKind::ENTITY_PRESENCE, tag, kDefaultElThreshold}; }
  static LabelRule popularity(NerTag tag, double threshold) { return {RuleKind::POPULARITY, tag, threshold}; }
  static LabelRule random() { return {RuleKind::RANDOM, NerTag::O, kDefaultElThreshold}; }
};

struct GenSpec {
  LabelRule rule;
  std::size_t n_instances = 200;
  std::vector<std::string> languages = {"en"};
  std::size_t min_len = 4;
  std::size_t max_len = 16;
  std::size_t vocab_size = 500;
  double positive_rate = 0.5;
  /// Per-token chance of a named entity unrelated to the rule.
  double distractor_rate = 0.1;
  /// Rule-tag mentions per instance are drawn from [1, max_rule_mentions].
  std::size_t max_rule_mentions = 2;
  std::size_t d_w = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(positive_rate > 0.0 && positive_rate < 1.0)) fail_config("generate: positive_rate must lie in (0, 1)");
    if (min_len < 1 || max_len > kDefaultMaxLen || min_len > max_len)
      fail_config("generate: length range must satisfy 1 <= min_len <= max_len <= 128");
    if (vocab_size < 1) fail_config("generate: vocab_size must be >= 1");
    if (languages.empty()) fail_config("generate: at least one language is required");
    if (!(distractor_rate >= 0.0 && distractor_rate <= 1.0)) fail_config("generate: distractor_rate must lie in [0, 1]");
    if (d_w < 1) fail_config("generate: d_w must be >= 1");
    if (rule.kind != RuleKind::RANDOM) {
      if (rule.tag == NerTag::O) fail_config("generate: the rule tag must be a named type");
      if (max_rule_mentions == 0)
        fail_config("generate: unsatisfiable spec, a positive rate needs at least one rule mention per instance");
    }
    if (rule.kind == RuleKind::POPULARITY && !(rule.threshold <= 0.0))
      fail_config("generate: popularity threshold must be <= 0");
  }
};

/// Label the rule assigns to an instance; nullopt for RANDOM.
inline std::optional<int> apply_rule(const LabelRule& rule, const ClaimInstance& inst) {
  switch (rule.kind) {
    case RuleKind::RANDOM: return std::nullopt;
    case RuleKind::ENTITY_PRESENCE:
      return std::any_of(inst.ner_tags.begin(), inst.ner_tags.end(), [&](NerTag t) { return t == rule.tag; }) ? 1 : 0;
    case RuleKind::POPULARITY:
      for (std::size_t i = 0; i < inst.size(); ++i)
        if (inst.ner_tags[i] == rule.tag && is_popular(inst.ner_tags[i], inst.el_logprobs[i], rule.threshold)) return 1;
      return 0;
  }
  return std::nullopt;
}

struct GeneratedCorpus {
  Dataset dataset;
  std::vector<std::pair<std::string, EmbeddingMatrix>> embeddings;
};

/// Hash embeddings for every instance of a dataset, keyed by id.
inline std::vector<std::pair<std::string, EmbeddingMatrix>> embed_dataset(const Dataset& ds, std::size_t d_w,
                                                                        std::uint64_t seed) {
  std::vector<std::pair<std::string, EmbeddingMatrix>> out;
  out.reserve(ds.size());
  for (const auto& inst : ds.instances) out.emplace_back(inst.id, hash_embed(inst.tokens, d_w, seed));
  return out;
}

namespace detail {

// Log-probability bands on either side of a popularity threshold.
inline double popular_logprob(Rng& rng, double t) { return t + (0.0 - t) * rng.uniform(); }
inline double unpopular_logprob(Rng& rng, double t) { return rng.uniform(t - 1.5, t - 0.05); }

inline NerTag random_named_tag_except(Rng& rng, NerTag excluded) {
  for (;;) {
    const auto t = static_cast<NerTag>(rng.below(kNamedTagCount));
    if (t != excluded) return t;
  }
}

}  // namespace detail

inline GeneratedCorpus generate(const GenSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const LabelRule& rule = spec.rule;
  GeneratedCorpus out;
  out.dataset.name = "synthetic";

  for (std::size_t k = 0; k < spec.n_instances; ++k) {
    ClaimInstance inst;
    inst.id = "s" + std::to_string(k);
    inst.lang = spec.languages[rng.below(spec.languages.size())];
    const bool positive = rng.bernoulli(spec.positive_rate);
    const auto len = static_cast<std::size_t>(
        rng.between(static_cast<std::int64_t>(spec.min_len), static_cast<std::int64_t>(spec.max_len)));

    inst.tokens.resize(len);
    inst.ner_tags.assign(len, NerTag::O);
    inst.el_logprobs.assign(len, std::nullopt);
    for (std::size_t i = 0; i < len; ++i) {
      inst.tokens[i] = inst.lang + "_w" + std::to_string(rng.below(spec.vocab_size));
      if (rng.bernoulli(spec.distractor_rate)) {
        inst.ner_tags[i] = rule.kind == RuleKind::RANDOM ? static_cast<NerTag>(rng.below(kNamedTagCount))
                                                          : detail::random_named_tag_except(rng, rule.tag);
        if (rng.bernoulli(0.8)) inst.el_logprobs[i] = rng.uniform(-1.0, 0.0);
      }
    }

    if (rule.kind == RuleKind::RANDOM) {
      inst.label = positive ? 1 : 0;
    } else {
      std::vector<std::size_t> positions(len);
      std::iota(positions.begin(), positions.end(), std::size_t{0});
      rng.shuffle(positions);
      const auto mentions = std::min<std::size_t>(
          len, static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(spec.max_rule_mentions))));

      if (rule.kind == RuleKind::ENTITY_PRESENCE) {
        if (positive) {
          for (std::size_t m = 0; m < mentions; ++m) {
            inst.ner_tags[positions[m]] = rule.tag;
            inst.el_logprobs[positions[m]] = rng.uniform(-1.0, 0.0);
          }
        }
      } else {
        for (std::size_t m = 0; m < mentions; ++m) {
          const std::size_t p = positions[m];
          inst.ner_tags[p] = rule.tag;
          if (positive && m == 0) {
            inst.el_logprobs[p] = detail::popular_logprob(rng, rule.threshold);
          } else if (positive && rng.bernoulli(0.5)) {
            inst.el_logprobs[p] = detail::popular_logprob(rng, rule.threshold);
          } else {
            // Unpopular: linked with low confidence, or not linked at all.
            inst.el_logprobs[p] = rng.bernoulli(0.8) ? std::optional<double>(detail::unpopular_logprob(rng, rule.threshold))
                                                     : std::nullopt;
          }
        }
      }
      inst.label = *apply_rule(rule, inst);
      if (inst.label != (positive ? 1 : 0)) fail_config("generate: rule could not realize the drawn label");
    }
    out.dataset.instances.push_back(std::move(inst));
  }
  out.embeddings = embed_dataset(out.dataset, spec.d_w, spec.seed);
  return out;
}

/// Consecutive slices of the given sizes.
inline std::vector<Dataset> split_dataset(const Dataset& ds, const std::vector<std::size_t>& sizes) {
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (total > ds.size()) fail_config("split_dataset: requested more instances than the dataset holds");
  std::vector<Dataset> out;
  std::size_t at = 0;
  for (auto s : sizes) {
    Dataset part;
    part.name = ds.name;
    part.instances.assign(ds.instances.begin() + static_cast<std::ptrdiff_t>(at),
                          ds.instances.begin() + static_cast<std::ptrdiff_t>(at + s));
    out.push_back(std::move(part));
    at += s;
  }
  return out;
}

struct GeneratedPairing {
  Dataset translations;
  PairingTable pairs;
};

/// Pseudo-language code for the i-th translation language.
inline std::string pseudo_language(std::size_t i) { return "x" + std::to_string(i); }

/// Clones every base instance into each of n_langs pseudo-languages. Labels,
/// tags and log-probabilities are kept position by position; each token maps
/// to a word of the target language's (disjoint) vocabulary.
inline GeneratedPairing generate_pairing(const Dataset& base, std::size_t n_langs, std::uint64_t seed) {
  if (base.empty()) fail_config("generate_pairing: base dataset is empty");
  GeneratedPairing out;
  out.translations.name = base.name + "-translated";
  for (std::size_t l = 0; l < n_langs; ++l) {
    const std::string lang = pseudo_language(l);
    for (const auto& src : base.instances) {
      ClaimInstance t = src;
      t.id = src.id + "@" + lang;
      t.lang = lang;
      t.source_id = src.id;
      for (auto& tok : t.tokens) {
        std::uint64_t h = detail::fnv1a_update(detail::kFnvOffset, lang);
        h = detail::fnv1a_update(h, tok);
        h = detail::fnv1a_update_u64(h, seed);
        tok = lang + "_t" + std::to_string(h % 1000003);
      }
      out.pairs.pairs.push_back({src.id, t.id, lang});
      out.translations.instances.push_back(std::move(t));
    }
  }
  return out;
}

inline GenSpec gen_spec_from_json(const nlohmann::json& j) {
  constexpr std::string_view what = "generator spec";
  detail::reject_unknown(j, {"rule", "n_instances", "languages", "min_len", "max_len", "vocab_size", "positive_rate",
                             "distractor_rate", "max_rule_mentions", "d_w", "seed", "splits", "pairing"},
                         what);
  GenSpec s;
  if (auto it = j.find("rule"); it != j.end()) {
    detail::reject_unknown(*it, {"kind", "tag", "threshold"}, "rule");
    std::string kind = "ENTITY_PRESENCE", tag = "DIS";
    detail::read_opt(*it, "kind", kind, "rule");
    detail::read_opt(*it, "tag", tag, "rule");
    detail::read_opt(*it, "threshold", s.rule.threshold, "rule");
    if (kind == "ENTITY_PRESENCE") s.rule.kind = RuleKind::ENTITY_PRESENCE;
    else if (kind == "POPULARITY") s.rule.kind = RuleKind::POPULARITY;
    else if (kind == "RANDOM") s.rule.kind = RuleKind::RANDOM;
    else fail_config("unknown rule kind '" + kind + "'");
    const auto t = parse_tag(tag);
    if (!t) fail_config("unknown rule tag '" + tag + "'");
    s.rule.tag = *t;
  }
  detail::read_opt(j, "n_instances", s.n_instances, what);
  detail::read_opt(j, "languages", s.languages, what);
  detail::read_opt(j, "min_len", s.min_len, what);
  detail::read_opt(j, "max_len", s.max_len, what);
  detail::read_opt(j, "vocab_size", s.vocab_size, what);
  detail::read_opt(j, "positive_rate", s.positive_rate, what);
  detail::read_opt(j, "distractor_rate", s.distractor_rate, what);
  detail::read_opt(j, "max_rule_mentions", s.max_rule_mentions, what);
  detail::read_opt(j, "d_w", s.d_w, what);
  detail::read_opt(j, "seed", s.seed, what);
  return s;
}

}  // namespace exclaim
