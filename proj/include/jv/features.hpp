#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "jv/tensor.hpp"

namespace jv {

/// Rows of features with one media (or template) id per row.
struct FeatureSet {
  Tensor rows;  // count x dim
  std::vector<std::string> ids;

  std::size_t count() const { return ids.size(); }
  std::size_t dim() const { return rows.empty() ? 0 : rows.cols(); }
  /// Row index of id; throws FormatError if absent.
  std::size_t index_of(const std::string& id) const;
};

/// Sidecar path holding the row -> id mapping.
std::filesystem::path feature_ids_path(const std::filesystem::path& path);

/// "JVFE", u32 dim, u64 count, count*dim little-endian f32 values; the
/// sidecar is comma-separated text with header `row,id`.
void write_features(const std::filesystem::path& path, const FeatureSet& features);
FeatureSet read_features(const std::filesystem::path& path);

}  // namespace jv
