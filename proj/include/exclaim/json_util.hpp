// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"

#include "exclaim/error.hpp"

namespace exclaim {

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                           std::string_view what) {
  if (!j.is_object()) fail_config(std::string(what) + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      fail_config("unknown key '" + k + "' in " + std::string(what));
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out, std::string_view what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    fail_config("wrong type for '" + std::string(key) + "' in " + std::string(what));
  }
}

}  // namespace detail

}  // namespace exclaim
