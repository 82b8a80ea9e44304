// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0
//
// Entity-type schemes. Each token carries a fine-grained NER tag and, for
// named tokens, an optional entity-linking log-probability. A scheme maps
// (tag, popular) to a categorical index consumed by the entity embedding.
//
//   NONE            no entity channel (k = 0)
//   NER             ordinal(tag) for named tags, 15 for O            (k = 16)
//   NER_POPULARITY  2*ordinal + (unpopular ? 1 : 0), 30 for O         (k = 31)
//
// The ordinal order below is frozen; checkpoints record it and refuse to load
// under a different one.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exclaim/error.hpp"

namespace exclaim {

enum class NerTag : std::uint8_t {
  PER, ORG, LOC, ANIM, BIO, CEL, DIS, EVE, FOOD, INST, MEDIA, PLANT, MYTH, TIME, VEHI,
  O,
};

inline constexpr std::size_t kNamedTagCount = 15;

inline constexpr std::array<std::string_view, kNamedTagCount + 1> kTagNames = {
    "PER", "ORG", "LOC", "ANIM", "BIO", "CEL", "DIS", "EVE",
    "FOOD", "INST", "MEDIA", "PLANT", "MYTH", "TIME", "VEHI", "O"};

inline constexpr double kDefaultElThreshold = -0.15;

inline std::string_view tag_name(NerTag tag) { return kTagNames[static_cast<std::size_t>(tag)]; }

inline std::optional<NerTag> parse_tag(std::string_view s) {
  for (std::size_t i = 0; i < kTagNames.size(); ++i)
    if (kTagNames[i] == s) return static_cast<NerTag>(i);
  return std::nullopt;
}

/// Ordinal of a named tag in 0..14; O has none.
inline std::optional<std::size_t> tag_ordinal(NerTag tag) {
  if (tag == NerTag::O) return std::nullopt;
  return static_cast<std::size_t>(tag);
}

/// Comma-joined named tags in ordinal order, stored in checkpoints.
inline std::string tag_ordering_string() {
  std::string out;
  for (std::size_t i = 0; i < kNamedTagCount; ++i) {
    if (i) out += ',';
    out += kTagNames[i];
  }
  return out;
}

enum class SchemeVariant : std::uint8_t { NONE, NER, NER_POPULARITY };

inline std::string_view variant_name(SchemeVariant v) {
  switch (v) {
    case SchemeVariant::NONE: return "NONE";
    case SchemeVariant::NER: return "NER";
    case SchemeVariant::NER_POPULARITY: return "NER_POPULARITY";
  }
  return "?";
}

inline std::optional<SchemeVariant> parse_variant(std::string_view s) {
  // Model-family aliases accepted too: X / EXN / EXP.
  if (s == "NONE" || s == "X") return SchemeVariant::NONE;
  if (s == "NER" || s == "EXN") return SchemeVariant::NER;
  if (s == "NER_POPULARITY" || s == "EXP") return SchemeVariant::NER_POPULARITY;
  return std::nullopt;
}

struct EntityScheme {
  SchemeVariant variant = SchemeVariant::NONE;
  double el_threshold = kDefaultElThreshold;

  void validate() const {
    if (!(el_threshold <= 0.0)) fail_config("el_threshold must be <= 0, got " + std::to_string(el_threshold));
  }
  friend bool operator==(const EntityScheme&, const EntityScheme&) = default;
};

using EntityTypeIndex = std::uint32_t;

inline std::size_t scheme_cardinality(SchemeVariant v) {
  switch (v) {
    case SchemeVariant::NONE: return 0;
    case SchemeVariant::NER: return kNamedTagCount + 1;
    case SchemeVariant::NER_POPULARITY: return 2 * kNamedTagCount + 1;
  }
  return 0;
}
inline std::size_t scheme_cardinality(const EntityScheme& s) { return scheme_cardinality(s.variant); }

/// Popular iff the token is named, linked, and its log-probability is at or
/// above the threshold (inclusive).
inline bool is_popular(NerTag tag, std::optional<double> el_logprob, double threshold) {
  return tag != NerTag::O && el_logprob.has_value() && *el_logprob >= threshold;
}

inline EntityTypeIndex type_index(SchemeVariant v, NerTag tag, bool popular) {
  const auto ord = tag_ordinal(tag);
  switch (v) {
    case SchemeVariant::NONE:
      fail_config("type_index is undefined for scheme NONE");
    case SchemeVariant::NER:
      return ord ? static_cast<EntityTypeIndex>(*ord) : static_cast<EntityTypeIndex>(kNamedTagCount);
    case SchemeVariant::NER_POPULARITY:
      if (!ord) return static_cast<EntityTypeIndex>(2 * kNamedTagCount);
      return static_cast<EntityTypeIndex>(2 * *ord + (popular ? 0 : 1));
  }
  fail_config("unknown scheme variant");
}
inline EntityTypeIndex type_index(const EntityScheme& s, NerTag tag, bool popular) {
  return type_index(s.variant, tag, popular);
}

/// Display name of a categorical index, e.g. "DIS", "PER_popular", "OTHER".
inline std::string type_name(SchemeVariant v, EntityTypeIndex idx) {
  switch (v) {
    case SchemeVariant::NER:
      if (idx < kNamedTagCount) return std::string(kTagNames[idx]);
      return "OTHER";
    case SchemeVariant::NER_POPULARITY:
      if (idx < 2 * kNamedTagCount)
        return std::string(kTagNames[idx / 2]) + (idx % 2 == 0 ? "_popular" : "_unpopular");
      return "OTHER";
    case SchemeVariant::NONE: break;
  }
  fail_config("scheme NONE has no entity types");
}

/// Per-token indices for parallel tag / log-probability arrays.
inline std::vector<EntityTypeIndex> assign_indices(const EntityScheme& scheme, std::span<const NerTag> tags,
                                                   std::span<const std::optional<double>> el_logprobs) {
  if (scheme.variant == SchemeVariant::NONE) fail_config("assign_indices is undefined for scheme NONE");
  if (tags.size() != el_logprobs.size()) fail_data("assign_indices: tag/log-probability length mismatch");
  std::vector<EntityTypeIndex> out(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i)
    out[i] = type_index(scheme, tags[i], is_popular(tags[i], el_logprobs[i], scheme.el_threshold));
  return out;
}

}  // namespace exclaim
