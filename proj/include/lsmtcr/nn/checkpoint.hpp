#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsmtcr/nn/params.hpp"

namespace lsmtcr::nn {

/// Unreadable or internally inconsistent checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint that is well formed but does not fit the requested model.
class ManifestMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Metadata = std::map<std::string, std::string>;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointData {
  std::vector<StoredTensor> tensors;
  Metadata metadata;

  const StoredTensor* find(const std::string& name) const;
  /// Tensors whose names start with `prefix`, with the prefix removed.
  /// Metadata is carried over unchanged.
  CheckpointData subset(const std::string& prefix) const;
  /// Throws CheckpointError when the key is absent.
  const std::string& meta(const std::string& key) const;
};

/// Writes `manifest.txt` (name, dtype, shape, byte offset; tab separated),
/// `weights.bin` (little-endian float32, row-major, manifest order) and
/// `config.txt` (sorted key=value lines). Files are staged in a sibling
/// directory and moved into place, so a failed save leaves no partial output.
void save_checkpoint(const std::filesystem::path& dir, const ParamSet& params, const Metadata& metadata);

CheckpointData load_checkpoint(const std::filesystem::path& dir);

/// Copies stored values into params. Every parameter must be present with an
/// identical shape, except those for which may_be_missing(name) holds; stored
/// tensors without a counterpart are rejected. Throws ManifestMismatch.
void restore_parameters(ParamSet& params, const CheckpointData& data,
                        const std::function<bool(const std::string&)>& may_be_missing = {});

/// Shortest text that round-trips the double.
std::string format_double(double v);
/// Typed metadata lookups; throw CheckpointError when the key is absent or
/// malformed.
std::size_t meta_size(const Metadata& meta, const std::string& key);
double meta_double(const Metadata& meta, const std::string& key);
const std::string& meta_string(const Metadata& meta, const std::string& key);

/// Throws ManifestMismatch naming `key` when metadata[key] != expected.
void expect_metadata(const CheckpointData& data, const std::string& key, const std::string& expected);

}  // namespace lsmtcr::nn
