#include "jv/features.hpp"

#include <fstream>
#include <unordered_map>

#include "jv/binary_io.hpp"
#include "jv/error.hpp"

namespace jv {

std::size_t FeatureSet::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return i;
  throw FormatError("feature id not found: " + id);
}

std::filesystem::path feature_ids_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".ids.csv";
  return p;
}

void write_features(const std::filesystem::path& path, const FeatureSet& features) {
  if (features.rows.rank() != 2 || features.rows.rows() != features.ids.size())
    throw DimensionError("write_features: rows and ids disagree");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write features " + path.string());
  bin::write_magic(out, "JVFE");
  bin::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(features.dim()));
  bin::write_uint<std::uint64_t>(out, features.count());
  for (double v : features.rows.values()) bin::write_f32(out, static_cast<float>(v));
  if (!out) throw IoError("failed writing " + path.string());

  std::ofstream ids(feature_ids_path(path));
  if (!ids) throw IoError("cannot write " + feature_ids_path(path).string());
  ids << "row,id\n";
  for (std::size_t i = 0; i < features.ids.size(); ++i) ids << i << ',' << features.ids[i] << '\n';
}

FeatureSet read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open features " + path.string());
  const std::string what = "features " + path.string();
  bin::expect_magic(in, "JVFE", what);
  const auto dim = bin::read_uint<std::uint32_t>(in);
  const auto count = bin::read_uint<std::uint64_t>(in);
  if (dim == 0 || count == 0) throw FormatError(what + ": empty feature file");
  FeatureSet fs;
  fs.rows = Tensor({static_cast<std::size_t>(count), dim});
  for (auto& v : fs.rows.values()) v = bin::read_f32(in);
  bin::expect_eof(in, what);

  std::ifstream ids(feature_ids_path(path));
  if (!ids) throw IoError("cannot open " + feature_ids_path(path).string());
  std::string line;
  std::getline(ids, line);
  if (line != "row,id") throw FormatError(feature_ids_path(path).string() + ": bad header");
  while (std::getline(ids, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(feature_ids_path(path).string() + ": bad row");
    if (std::stoull(line.substr(0, comma)) != fs.ids.size())
      throw FormatError(feature_ids_path(path).string() + ": rows out of order");
    fs.ids.push_back(line.substr(comma + 1));
  }
  if (fs.ids.size() != count)
    throw FormatError(what + ": id sidecar has " + std::to_string(fs.ids.size()) + " rows, expected " +
                      std::to_string(count));
  return fs;
}

}  // namespace jv
