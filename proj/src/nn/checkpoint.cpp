#include "lsmtcr/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

namespace lsmtcr::nn {
namespace fs = std::filesystem;
namespace {

void write_f32_le(std::ostream& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

float read_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(part, &used);
    if (used != part.size()) throw std::invalid_argument("bad dimension");
    shape.push_back(static_cast<std::size_t>(v));
  }
  if (shape.empty()) throw std::invalid_argument("empty shape");
  return shape;
}

}  // namespace

const StoredTensor* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

CheckpointData CheckpointData::subset(const std::string& prefix) const {
  CheckpointData out;
  out.metadata = metadata;
  for (const auto& t : tensors) {
    if (t.name.compare(0, prefix.size(), prefix) == 0) out.tensors.push_back({t.name.substr(prefix.size()), t.shape, t.values});
  }
  return out;
}

const std::string& CheckpointData::meta(const std::string& key) const {
  const auto it = metadata.find(key);
  if (it == metadata.end()) throw CheckpointError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

void save_checkpoint(const fs::path& dir, const ParamSet& params, const Metadata& metadata) {
  for (const auto& [key, value] : metadata) {
    if (key.find('=') != std::string::npos || key.find('\n') != std::string::npos ||
        value.find('\n') != std::string::npos) {
      throw std::invalid_argument("metadata entries cannot contain '=' in keys or newlines");
    }
  }
  const fs::path staging = dir.parent_path() / (dir.filename().string() + ".partial");
  fs::remove_all(staging);
  fs::create_directories(staging);
  {
    std::ofstream manifest(staging / "manifest.txt", std::ios::binary);
    std::ofstream weights(staging / "weights.bin", std::ios::binary);
    std::size_t offset = 0;
    for (const auto& p : params.items()) {
      std::string dims;
      for (std::size_t i = 0; i < p.tensor.shape().size(); ++i) {
        dims += (i ? "," : "") + std::to_string(p.tensor.shape()[i]);
      }
      manifest << p.name << '\t' << "f32" << '\t' << dims << '\t' << offset << '\n';
      for (double v : p.tensor.values()) write_f32_le(weights, static_cast<float>(v));
      offset += p.tensor.numel() * 4;
    }
    std::ofstream config(staging / "config.txt", std::ios::binary);
    for (const auto& [key, value] : metadata) config << key << '=' << value << '\n';
    if (!manifest || !weights || !config) throw std::runtime_error("failed writing checkpoint to " + staging.string());
  }
  fs::remove_all(dir);
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
  fs::rename(staging, dir);
}

CheckpointData load_checkpoint(const fs::path& dir) {
  CheckpointData data;
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw CheckpointError("missing manifest.txt in '" + dir.string() + "'");
  std::ifstream weights(dir / "weights.bin", std::ios::binary);
  if (!weights) throw CheckpointError("missing weights.bin in '" + dir.string() + "'");
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(weights)), std::istreambuf_iterator<char>());

  std::string line;
  std::size_t line_no = 0;
  std::size_t expected_offset = 0;
  std::set<std::string> names;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    const std::string where = "manifest line " + std::to_string(line_no);
    if (fields.size() != 4) throw CheckpointError(where + ": expected 4 tab-separated fields");
    if (fields[1] != "f32") throw CheckpointError(where + ": unsupported dtype '" + fields[1] + "'");
    StoredTensor t;
    t.name = fields[0];
    std::size_t offset = 0;
    try {
      t.shape = parse_shape(fields[2]);
      std::size_t used = 0;
      offset = static_cast<std::size_t>(std::stoull(fields[3], &used));
      if (used != fields[3].size()) throw std::invalid_argument("offset");
    } catch (const std::exception&) {
      throw CheckpointError(where + ": malformed shape or offset");
    }
    if (!names.insert(t.name).second) throw CheckpointError(where + ": duplicate name '" + t.name + "'");
    if (offset != expected_offset) throw CheckpointError(where + ": offset does not follow the previous tensor");
    const std::size_t n = element_count(t.shape);
    if (offset + n * 4 > blob.size()) throw CheckpointError(where + ": weights.bin is truncated");
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.values[i] = read_f32_le(blob.data() + offset + 4 * i);
    expected_offset = offset + n * 4;
    data.tensors.push_back(std::move(t));
  }
  if (expected_offset != blob.size()) throw CheckpointError("weights.bin size does not match manifest");

  std::ifstream config(dir / "config.txt");
  if (!config) throw CheckpointError("missing config.txt in '" + dir.string() + "'");
  while (std::getline(config, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("config.txt line without '=': " + line);
    data.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return data;
}

void restore_parameters(ParamSet& params, const CheckpointData& data,
                        const std::function<bool(const std::string&)>& may_be_missing) {
  std::set<std::string> used;
  for (auto& p : params.items()) {
    const StoredTensor* stored = data.find(p.name);
    if (!stored) {
      if (may_be_missing && may_be_missing(p.name)) continue;
      throw ManifestMismatch("checkpoint lacks parameter '" + p.name + "'");
    }
    if (stored->shape != p.tensor.shape()) {
      const auto& want = p.tensor.shape();
      std::string detail = shape_string(stored->shape) + " vs expected " + shape_string(want);
      if (stored->shape.size() == want.size()) {
        for (std::size_t i = 0; i < want.size(); ++i) {
          if (stored->shape[i] != want[i]) {
            detail = "dimension " + std::to_string(i) + " is " + std::to_string(stored->shape[i]) + ", expected " +
                     std::to_string(want[i]);
            break;
          }
        }
      }
      throw ManifestMismatch("parameter '" + p.name + "': " + detail);
    }
    auto values = p.tensor.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(stored->values[i]);
    used.insert(p.name);
  }
  for (const auto& t : data.tensors) {
    if (!used.count(t.name) && !params.contains(t.name)) {
      throw ManifestMismatch("checkpoint parameter '" + t.name + "' has no counterpart in the model");
    }
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const std::string& meta_string(const Metadata& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw CheckpointError("metadata lacks '" + key + "'");
  return it->second;
}

std::size_t meta_size(const Metadata& meta, const std::string& key) {
  const std::string& text = meta_string(meta, key);
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw CheckpointError("metadata '" + key + "' is not a count: " + text);
  }
}

double meta_double(const Metadata& meta, const std::string& key) {
  const std::string& text = meta_string(meta, key);
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw CheckpointError("metadata '" + key + "' is not a number: " + text);
  }
}

void expect_metadata(const CheckpointData& data, const std::string& key, const std::string& expected) {
  const auto it = data.metadata.find(key);
  const std::string found = it == data.metadata.end() ? "<absent>" : it->second;
  if (found != expected) {
    throw ManifestMismatch("checkpoint " + key + " is " + found + ", expected " + expected);
  }
}

}  // namespace lsmtcr::nn
