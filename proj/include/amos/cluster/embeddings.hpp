#pragma once

#include "amos/common/binary_io.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace amos::cluster {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N global-image descriptors of a common dimension D, one row per id.
struct EmbeddingSet {
  std::vector<std::string> image_ids;
  RowMatrix vectors;

  [[nodiscard]] std::size_t size() const noexcept { return image_ids.size(); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return vectors.cols(); }

  void validate() const {
    if (static_cast<Eigen::Index>(image_ids.size()) != vectors.rows()) {
      throw std::invalid_argument("EmbeddingSet: id count does not match vector rows");
    }
    if (!vectors.allFinite()) throw std::invalid_argument("EmbeddingSet: non-finite vector");
  }

  /// Row subset in the given id order.
  [[nodiscard]] EmbeddingSet subset(const std::vector<std::string>& ids) const {
    EmbeddingSet out;
    out.vectors.resize(static_cast<Eigen::Index>(ids.size()), vectors.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto it = std::find(image_ids.begin(), image_ids.end(), ids[i]);
      if (it == image_ids.end()) throw std::out_of_range("EmbeddingSet: unknown id " + ids[i]);
      out.vectors.row(static_cast<Eigen::Index>(i)) = vectors.row(it - image_ids.begin());
    }
    out.image_ids = ids;
    return out;
  }

  void l2_normalize_rows() {
    for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
      const double n = vectors.row(r).norm();
      if (n > 0) vectors.row(r) /= n;
    }
  }
};

inline constexpr std::uint32_t kEmbeddingVersion = 1;

// AMEM v1: magic, u32 version, u32 N, u32 D, N*D float32 row-major, then N
// null-terminated ids in row order. All integers little-endian.
inline void write_embeddings(std::ostream& out, const EmbeddingSet& set) {
  set.validate();
  out.write("AMEM", 4);
  binio::put_le<std::uint32_t>(out, kEmbeddingVersion);
  binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.size()));
  binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.dim()));
  for (Eigen::Index r = 0; r < set.vectors.rows(); ++r)
    for (Eigen::Index c = 0; c < set.vectors.cols(); ++c) binio::put_le<float>(out, static_cast<float>(set.vectors(r, c)));
  for (const auto& id : set.image_ids) {
    if (id.find('\0') != std::string::npos) throw std::invalid_argument("embedding id contains NUL");
    out.write(id.c_str(), static_cast<std::streamsize>(id.size() + 1));
  }
  if (!out) throw std::runtime_error("write_embeddings: I/O failure");
}

inline EmbeddingSet read_embeddings(std::istream& in) {
  binio::expect_magic(in, "AMEM");
  const auto version = binio::get_le<std::uint32_t>(in);
  if (version != kEmbeddingVersion) throw std::runtime_error("AMEM: unsupported version " + std::to_string(version));
  const auto n = binio::get_le<std::uint32_t>(in);
  const auto d = binio::get_le<std::uint32_t>(in);
  EmbeddingSet set;
  set.vectors.resize(n, d);
  for (std::uint32_t r = 0; r < n; ++r)
    for (std::uint32_t c = 0; c < d; ++c) set.vectors(r, c) = binio::get_le<float>(in);
  set.image_ids.reserve(n);
  for (std::uint32_t r = 0; r < n; ++r) set.image_ids.push_back(binio::get_cstring(in));
  set.validate();
  return set;
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_embeddings(out, set);
}

inline EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_embeddings(in);
}

}  // namespace amos::cluster
