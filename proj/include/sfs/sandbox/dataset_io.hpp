#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfs/errors.hpp"
#include "sfs/point_cloud.hpp"

namespace sfs {

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; big-endian hosts unsupported");

inline constexpr int kDatasetFormatVersion = 1;

struct ManifestEntry {
  std::string id;
  int n = 0;  // frame1 / flow rows
  int m = 0;  // frame2 rows
  Mechanism mechanism = Mechanism::correspondence;
  std::uint64_t seed = 0;
  std::string f1_file, f2_file, flow_file;
};

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  std::vector<ManifestEntry> samples;
};

namespace detail {

inline std::string sample_id(int index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

// Row-major N x 3 float32 array.
inline void write_f32(const std::filesystem::path& path,
                      const PointMatrix& mat) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  std::vector<float> buffer(static_cast<std::size_t>(mat.rows()) * 3);
  std::size_t at = 0;
  for (Eigen::Index i = 0; i < mat.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      buffer[at++] = static_cast<float>(mat(i, c));
  out.write(reinterpret_cast<const char*>(buffer.data()),
            static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

inline PointMatrix read_f32(const std::filesystem::path& path,
                            int expected_rows) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec)
    throw DataError(DataErrorCode::manifest_mismatch,
                    "listed file missing: " + path.string());
  if (size % (3 * sizeof(float)) != 0)
    throw DataError(DataErrorCode::truncated_file,
                    "truncated file (size " + std::to_string(size) + "): " +
                        path.string());
  const auto rows = static_cast<int>(size / (3 * sizeof(float)));
  if (rows != expected_rows)
    throw DataError(DataErrorCode::manifest_mismatch,
                    "manifest claims " + std::to_string(expected_rows) +
                        " points but file holds " + std::to_string(rows) +
                        ": " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::vector<float> buffer(static_cast<std::size_t>(rows) * 3);
  in.read(reinterpret_cast<char*>(buffer.data()),
          static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  if (!in)
    throw DataError(DataErrorCode::truncated_file,
                    "short read: " + path.string());
  PointMatrix mat(rows, 3);
  std::size_t at = 0;
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < 3; ++c)
      mat(i, c) = static_cast<double>(buffer[at++]);
  return mat;
}

}  // namespace detail

inline void write_manifest(const DatasetManifest& manifest,
                           const std::filesystem::path& dir) {
  nlohmann::json j;
  j["format_version"] = manifest.format_version;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : manifest.samples) {
    j["samples"].push_back({{"id", s.id},
                            {"n", s.n},
                            {"m", s.m},
                            {"mechanism", to_string(s.mechanism)},
                            {"seed", s.seed},
                            {"f1", s.f1_file},
                            {"f2", s.f2_file},
                            {"flow", s.flow_file}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << j.dump(2) << "\n";
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataErrorCode::malformed,
                    "malformed manifest: " + std::string(e.what()));
  }
  DatasetManifest manifest;
  try {
    manifest.format_version = j.at("format_version").get<int>();
    if (manifest.format_version != kDatasetFormatVersion)
      throw DataError(DataErrorCode::version_mismatch,
                      "manifest format version " +
                          std::to_string(manifest.format_version) +
                          " != supported " +
                          std::to_string(kDatasetFormatVersion));
    for (const auto& s : j.at("samples")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      e.n = s.at("n").get<int>();
      e.m = s.at("m").get<int>();
      e.mechanism = mechanism_from_string(s.at("mechanism").get<std::string>());
      e.seed = s.at("seed").get<std::uint64_t>();
      e.f1_file = s.at("f1").get<std::string>();
      e.f2_file = s.at("f2").get<std::string>();
      e.flow_file = s.at("flow").get<std::string>();
      manifest.samples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataErrorCode::malformed,
                    "malformed manifest: " + std::string(e.what()));
  }
  return manifest;
}

// Writes samples as <id>_f1.f32 / <id>_f2.f32 / <id>_flow.f32 plus
// manifest.json. Coordinates are stored as little-endian float32 row-major;
// generated data is float-exact, so the round trip is bit-exact.
inline void write_dataset(const std::vector<ScenePair>& pairs,
                          const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string());
  DatasetManifest manifest;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const ScenePair& pair = pairs[i];
    pair.validate();
    ManifestEntry e;
    e.id = pair.meta.id.empty() ? detail::sample_id(static_cast<int>(i))
                                : pair.meta.id;
    e.n = pair.frame1.size();
    e.m = pair.frame2.size();
    e.mechanism = pair.meta.mechanism;
    e.seed = pair.meta.seed;
    e.f1_file = e.id + "_f1.f32";
    e.f2_file = e.id + "_f2.f32";
    e.flow_file = e.id + "_flow.f32";
    detail::write_f32(dir / e.f1_file, pair.frame1.points);
    detail::write_f32(dir / e.f2_file, pair.frame2.points);
    detail::write_f32(dir / e.flow_file, pair.gt_flow.vectors);
    manifest.samples.push_back(std::move(e));
  }
  write_manifest(manifest, dir);
}

inline std::vector<ScenePair> read_dataset(const std::filesystem::path& dir) {
  const DatasetManifest manifest = read_manifest(dir);
  std::vector<ScenePair> pairs;
  pairs.reserve(manifest.samples.size());
  for (const auto& e : manifest.samples) {
    ScenePair pair;
    pair.frame1.points = detail::read_f32(dir / e.f1_file, e.n);
    pair.frame2.points = detail::read_f32(dir / e.f2_file, e.m);
    pair.gt_flow.vectors = detail::read_f32(dir / e.flow_file, e.n);
    pair.meta = GenMeta{e.mechanism, 0, e.seed, e.id};
    try {
      pair.validate();
    } catch (const Error& err) {
      throw DataError(DataErrorCode::malformed,
                      "sample " + e.id + ": " + err.what());
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace sfs
