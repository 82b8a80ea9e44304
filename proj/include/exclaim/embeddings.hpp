// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen per-token word embeddings.
//
// Store layout (all little-endian):
//   data file   "EXEB" | u32 version=1 | u32 d_w | rows of d_w float32
//   index file  <data>.index.jsonl, one {"id","offset","rows"} per line;
//               offset is in bytes from the start of the row region.
//
// Values are stored as float32 and widened to double on fetch.

#pragma once

#include <array>
#include <bit>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "exclaim/error.hpp"
#include "exclaim/tensor.hpp"

namespace exclaim {

static_assert(std::endian::native == std::endian::little, "store I/O assumes a little-endian host");

inline constexpr std::array<char, 4> kStoreMagic = {'E', 'X', 'E', 'B'};
inline constexpr std::uint32_t kStoreVersion = 1;
inline constexpr std::size_t kStoreHeaderBytes = 12;
inline constexpr std::size_t kDefaultEmbeddingDim = 768;

using EmbeddingMatrix = Matrix;

/// Anything that hands out the n x d_w matrix for an instance id.
template <typename T>
concept EmbeddingSource = requires(const T& s, const std::string& id) {
  { s.dim() } -> std::convertible_to<std::size_t>;
  { s.fetch(id) } -> std::same_as<EmbeddingMatrix>;
};

inline std::string index_path_for(const std::string& data_path) { return data_path + ".index.jsonl"; }

/// Writes entries in the given order. Matrices are narrowed to float32.
inline void write_store(const std::vector<std::pair<std::string, EmbeddingMatrix>>& entries, const std::string& path,
                        std::size_t d_w = 0) {
  if (d_w == 0) {
    if (entries.empty()) fail_data("write_store: cannot infer d_w from an empty entry list");
    d_w = entries.front().second.cols;
  }
  std::unordered_set<std::string> ids;
  for (const auto& [id, m] : entries) {
    if (m.cols != d_w)
      fail_data("write_store: dimension mismatch for '" + id + "': " + std::to_string(m.cols) + " vs " +
                std::to_string(d_w));
    if (!ids.insert(id).second) fail_data("write_store: duplicate id '" + id + "'");
    if (!m.all_finite()) fail_data("write_store: non-finite value in '" + id + "'");
  }

  std::ofstream data(path, std::ios::binary | std::ios::trunc);
  std::ofstream index(index_path_for(path), std::ios::binary | std::ios::trunc);
  if (!data || !index) fail_data("write_store: cannot open '" + path + "' for writing");

  const std::uint32_t header[2] = {kStoreVersion, static_cast<std::uint32_t>(d_w)};
  data.write(kStoreMagic.data(), 4);
  data.write(reinterpret_cast<const char*>(header), sizeof header);

  std::uint64_t offset = 0;
  std::vector<float> buf;
  for (const auto& [id, m] : entries) {
    buf.assign(m.data.begin(), m.data.end());
    data.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    index << nlohmann::json{{"id", id}, {"offset", offset}, {"rows", m.rows}}.dump() << '\n';
    offset += buf.size() * sizeof(float);
  }
  if (!data || !index) fail_data("write_store: write error on '" + path + "'");
}

/// Read-only random-access handle over a store on disk. fetch() opens its own
/// stream so concurrent calls are safe.
class EmbeddingStore {
 public:
  struct Region {
    std::uint64_t offset = 0;
    std::uint64_t rows = 0;
  };

  static EmbeddingStore open(const std::string& path) {
    EmbeddingStore s;
    s.path_ = path;
    std::ifstream data(path, std::ios::binary);
    if (!data) fail_data("open_store: cannot open '" + path + "'");
    char head[kStoreHeaderBytes];
    if (!data.read(head, kStoreHeaderBytes)) fail_data("open_store: '" + path + "' is shorter than its header");
    if (std::memcmp(head, kStoreMagic.data(), 4) != 0) fail_data("open_store: bad magic in '" + path + "'");
    std::uint32_t version = 0, dim = 0;
    std::memcpy(&version, head + 4, 4);
    std::memcpy(&dim, head + 8, 4);
    if (version != kStoreVersion)
      fail_data("open_store: version mismatch in '" + path + "': " + std::to_string(version));
    if (dim == 0) fail_data("open_store: d_w is zero in '" + path + "'");
    s.dim_ = dim;

    const auto file_size = std::filesystem::file_size(path);
    const std::uint64_t payload = file_size - kStoreHeaderBytes;
    const std::uint64_t row_bytes = 4ULL * dim;

    std::ifstream index(index_path_for(path));
    if (!index) fail_data("open_store: cannot open index '" + index_path_for(path) + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(index, line)) {
      ++line_no;
      if (line.empty()) continue;
      const std::string at = index_path_for(path) + ": line " + std::to_string(line_no) + ": ";
      try {
        const auto j = nlohmann::json::parse(line);
        const auto id = j.at("id").get<std::string>();
        Region r{j.at("offset").get<std::uint64_t>(), j.at("rows").get<std::uint64_t>()};
        if (r.offset % row_bytes != 0) fail_data(at + "offset not a multiple of 4*d_w");
        if (r.rows > payload / row_bytes || r.offset > payload - r.rows * row_bytes)
          fail_data(at + "region of '" + id + "' lies outside the data file (corrupt index)");
        if (!s.index_.emplace(id, r).second) fail_data(at + "duplicate id '" + id + "'");
      } catch (const nlohmann::json::exception& e) {
        fail_data(at + e.what());
      }
    }
    return s;
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return index_.size(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  const std::string& path() const { return path_; }

  Region region(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) fail_data("embedding store has no entry for id '" + id + "'");
    return it->second;
  }

  EmbeddingMatrix fetch(const std::string& id) const {
    const Region r = region(id);
    std::ifstream data(path_, std::ios::binary);
    if (!data) fail_data("fetch: cannot reopen '" + path_ + "'");
    data.seekg(static_cast<std::streamoff>(kStoreHeaderBytes + r.offset));
    std::vector<float> buf(r.rows * dim_);
    if (!data.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
      fail_data("fetch: short read for '" + id + "'");
    EmbeddingMatrix m(r.rows, dim_);
    std::copy(buf.begin(), buf.end(), m.data.begin());
    return m;
  }

 private:
  std::string path_;
  std::size_t dim_ = 0;
  std::unordered_map<std::string, Region> index_;
};

inline EmbeddingStore open_store(const std::string& path) { return EmbeddingStore::open(path); }

/// In-memory source, used by tests and by the generator before writing.
/// Entries are rounded through float32 so results match a written store.
class MemoryStore {
 public:
  explicit MemoryStore(std::size_t d_w) : dim_(d_w) {}

  void add(const std::string& id, EmbeddingMatrix m) {
    if (m.cols != dim_) fail_data("MemoryStore: dimension mismatch for '" + id + "'");
    for (double& v : m.data) v = static_cast<double>(static_cast<float>(v));
    if (!entries_.emplace(id, std::move(m)).second) fail_data("MemoryStore: duplicate id '" + id + "'");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }

  EmbeddingMatrix fetch(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) fail_data("embedding store has no entry for id '" + id + "'");
    return it->second;
  }

 private:
  std::size_t dim_;
  std::unordered_map<std::string, EmbeddingMatrix> entries_;
};

namespace detail {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a_update(std::uint64_t h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a_update_u64(std::uint64_t h, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) {
    h ^= (v >> (8 * b)) & 0xFF;
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace detail

/// Deterministic, context-free token embedding: entry (i, j) is
/// 2 * h / 2^64 - 1 with h = FNV-1a64(token_i bytes | le64(j) | le64(seed)).
inline EmbeddingMatrix hash_embed(const std::vector<std::string>& tokens, std::size_t d_w, std::uint64_t seed) {
  if (d_w == 0) fail_config("hash_embed: d_w must be >= 1");
  EmbeddingMatrix m(tokens.size(), d_w);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::uint64_t base = detail::fnv1a_update(detail::kFnvOffset, tokens[i]);
    for (std::size_t j = 0; j < d_w; ++j) {
      const std::uint64_t h = detail::fnv1a_update_u64(detail::fnv1a_update_u64(base, j), seed);
      // 2^-63 * h can round up to exactly 2.0 for h near 2^64; keep the top 53 bits.
      m(i, j) = static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
    }
  }
  return m;
}

}  // namespace exclaim
