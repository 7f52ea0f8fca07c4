#pragma once

// Versioned binary container shared by checkpoints, replay snapshots and
// demonstration files.
//
// Layout (all integers little-endian):
//   magic       8 bytes  "ACMBOX\0\1"
//   version     u32      kFormatVersion
//   kind        u32      ContainerKind
//   manifest    u64 byte length, then UTF-8 JSON:
//                 {"meta": {...}, "records": [{"name": str, "shape": [u64...]}, ...]}
//   payload     IEEE-754 binary64 values, little-endian, records in manifest order
//
// The file size must match the manifest exactly; anything else is reported as
// a corrupt file and nothing is returned.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "aircombat/common.hpp"
#include "aircombat/nn.hpp"

namespace aircombat::io {

using nlohmann::json;

inline constexpr std::array<char, 8> kMagic = {'A', 'C', 'M', 'B', 'O', 'X', '\0', '\1'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class ContainerKind : std::uint32_t { Checkpoint = 1, ReplaySnapshot = 2, Demonstrations = 3 };

struct CorruptFileError : Error {
  using Error::Error;
};
struct VersionMismatchError : Error {
  using Error::Error;
};
struct ShapeMismatchError : Error {
  using Error::Error;
};
struct FileAccessError : Error {
  using Error::Error;
};

struct Record {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace detail

class Container {
 public:
  explicit Container(ContainerKind kind = ContainerKind::Checkpoint) : kind_(kind) {}

  ContainerKind kind() const { return kind_; }
  json& meta() { return meta_; }
  const json& meta() const { return meta_; }
  const std::vector<Record>& records() const { return records_; }

  void add(std::string name, std::vector<std::uint64_t> shape, std::vector<double> data) {
    std::uint64_t n = 1;
    for (auto s : shape) n *= s;
    if (n != data.size()) throw InputError("record '" + name + "' shape does not match its data length");
    for (const auto& r : records_)
      if (r.name == name) throw InputError("duplicate record '" + name + "'");
    records_.push_back({std::move(name), std::move(shape), std::move(data)});
  }

  void add_matrix(const std::string& name, const nn::Matrix& m) {
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    add(name, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, std::move(data));
  }

  bool has(const std::string& name) const {
    for (const auto& r : records_)
      if (r.name == name) return true;
    return false;
  }

  const Record& get(const std::string& name) const {
    for (const auto& r : records_)
      if (r.name == name) return r;
    throw CorruptFileError("missing record '" + name + "'");
  }

  nn::Matrix get_matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
    const Record& r = get(name);
    if (r.shape.size() != 2 || r.shape[0] != static_cast<std::uint64_t>(rows) ||
        r.shape[1] != static_cast<std::uint64_t>(cols))
      throw ShapeMismatchError("record '" + name + "' has an unexpected shape");
    nn::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = r.data[static_cast<std::size_t>(i * cols + j)];
    return m;
  }

  std::string serialize() const {
    json manifest;
    manifest["meta"] = meta_.is_null() ? json::object() : meta_;
    manifest["records"] = json::array();
    for (const auto& r : records_) manifest["records"].push_back({{"name", r.name}, {"shape", r.shape}});
    const std::string text = manifest.dump();

    std::string out(kMagic.begin(), kMagic.end());
    detail::put_u32(out, kFormatVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(kind_));
    detail::put_u64(out, text.size());
    out += text;
    for (const auto& r : records_)
      for (double v : r.data) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
  }

  static Container deserialize(const std::string& bytes, ContainerKind expected) {
    constexpr std::size_t header = 8 + 4 + 4 + 8;
    if (bytes.size() < header || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
      throw CorruptFileError("not a container file (bad magic or truncated header)");
    const auto version = static_cast<std::uint32_t>(detail::get_le(bytes, 8, 4));
    if (version != kFormatVersion)
      throw VersionMismatchError("container format version " + std::to_string(version) + ", expected " +
                                 std::to_string(kFormatVersion));
    const auto kind = static_cast<std::uint32_t>(detail::get_le(bytes, 12, 4));
    if (kind != static_cast<std::uint32_t>(expected))
      throw CorruptFileError("container holds kind " + std::to_string(kind) + ", expected " +
                             std::to_string(static_cast<std::uint32_t>(expected)));
    const std::uint64_t manifest_len = detail::get_le(bytes, 16, 8);
    if (manifest_len > bytes.size() - header) throw CorruptFileError("truncated manifest");

    json manifest;
    try {
      manifest = json::parse(bytes.substr(header, manifest_len));
    } catch (const json::exception& e) {
      throw CorruptFileError(std::string("unreadable manifest: ") + e.what());
    }

    Container c(static_cast<ContainerKind>(kind));
    std::size_t pos = header + manifest_len;
    try {
      c.meta_ = manifest.at("meta");
      for (const auto& entry : manifest.at("records")) {
        Record r;
        r.name = entry.at("name").get<std::string>();
        r.shape = entry.at("shape").get<std::vector<std::uint64_t>>();
        std::uint64_t n = 1;
        for (auto s : r.shape) n *= s;
        if (n > (bytes.size() - pos) / 8) throw CorruptFileError("truncated payload in record '" + r.name + "'");
        r.data.resize(n);
        for (std::uint64_t i = 0; i < n; ++i, pos += 8) r.data[i] = std::bit_cast<double>(detail::get_le(bytes, pos, 8));
        c.records_.push_back(std::move(r));
      }
    } catch (const json::exception& e) {
      throw CorruptFileError(std::string("malformed manifest: ") + e.what());
    }
    if (pos != bytes.size()) throw CorruptFileError("trailing bytes after payload");
    return c;
  }

  /// Writes to a sibling temp file and renames it into place.
  void save(const std::filesystem::path& path) const {
    const std::string bytes = serialize();
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw FileAccessError("cannot write " + path.string());
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!out) throw FileAccessError("short write to " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw FileAccessError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
  }

  static Container load(const std::filesystem::path& path, ContainerKind expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileAccessError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes, expected);
  }

 private:
  ContainerKind kind_;
  json meta_ = json::object();
  std::vector<Record> records_;
};

// Networks and optimizer states are stored as "<name>/w<k>", "<name>/b<k>"
// records with a manifest entry under meta.networks / meta.optimizers.

inline void put_network(Container& c, const std::string& name, const nn::Mlp& net) {
  c.meta()["networks"][name] = {{"layer_sizes", net.layer_sizes}, {"output", nn::to_string(net.output)}};
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    c.add_matrix(name + "/w" + std::to_string(k), net.weights[k]);
    c.add_matrix(name + "/b" + std::to_string(k), net.biases[k].transpose());
  }
}

inline nn::Mlp get_network(const Container& c, const std::string& name,
                           const std::vector<int>& expected_sizes = {}) {
  const json& networks = c.meta().value("networks", json::object());
  if (!networks.contains(name)) throw CorruptFileError("checkpoint has no network '" + name + "'");
  nn::Mlp net;
  try {
    net.layer_sizes = networks.at(name).at("layer_sizes").get<std::vector<int>>();
    net.output = nn::parse_output_activation(networks.at(name).at("output").get<std::string>());
  } catch (const json::exception& e) {
    throw CorruptFileError("malformed manifest entry for '" + name + "': " + e.what());
  }
  if (!expected_sizes.empty() && expected_sizes != net.layer_sizes) {
    auto fmt = [](const std::vector<int>& v) {
      std::string s = "(";
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s + ")";
    };
    throw ShapeMismatchError("network '" + name + "' has layer sizes " + fmt(net.layer_sizes) + ", expected " +
                             fmt(expected_sizes));
  }
  nn::check_layer_sizes(net.layer_sizes);
  for (std::size_t k = 0; k + 1 < net.layer_sizes.size(); ++k) {
    net.weights.push_back(c.get_matrix(name + "/w" + std::to_string(k), net.layer_sizes[k + 1], net.layer_sizes[k]));
    net.biases.push_back(c.get_matrix(name + "/b" + std::to_string(k), 1, net.layer_sizes[k + 1]).row(0).transpose());
  }
  return net;
}

inline void put_optimizer(Container& c, const std::string& name, const nn::AdamState& s) {
  c.meta()["optimizers"][name] = {{"step", s.step}, {"beta1", s.beta1}, {"beta2", s.beta2}, {"epsilon", s.epsilon}};
  for (std::size_t k = 0; k < s.first_moment.weights.size(); ++k) {
    const auto idx = std::to_string(k);
    c.add_matrix(name + "/mw" + idx, s.first_moment.weights[k]);
    c.add_matrix(name + "/mb" + idx, s.first_moment.biases[k].transpose());
    c.add_matrix(name + "/vw" + idx, s.second_moment.weights[k]);
    c.add_matrix(name + "/vb" + idx, s.second_moment.biases[k].transpose());
  }
}

inline nn::AdamState get_optimizer(const Container& c, const std::string& name, const nn::Mlp& shape_of) {
  const json& opts = c.meta().value("optimizers", json::object());
  if (!opts.contains(name)) throw CorruptFileError("checkpoint has no optimizer '" + name + "'");
  nn::AdamState s = nn::AdamState::for_network(shape_of);
  try {
    s.step = opts.at(name).at("step").get<std::int64_t>();
    s.beta1 = opts.at(name).at("beta1").get<double>();
    s.beta2 = opts.at(name).at("beta2").get<double>();
    s.epsilon = opts.at(name).at("epsilon").get<double>();
  } catch (const json::exception& e) {
    throw CorruptFileError("malformed optimizer entry '" + name + "': " + e.what());
  }
  for (std::size_t k = 0; k < shape_of.num_layers(); ++k) {
    const auto idx = std::to_string(k);
    const auto rows = shape_of.weights[k].rows();
    const auto cols = shape_of.weights[k].cols();
    s.first_moment.weights[k] = c.get_matrix(name + "/mw" + idx, rows, cols);
    s.first_moment.biases[k] = c.get_matrix(name + "/mb" + idx, 1, rows).row(0).transpose();
    s.second_moment.weights[k] = c.get_matrix(name + "/vw" + idx, rows, cols);
    s.second_moment.biases[k] = c.get_matrix(name + "/vb" + idx, 1, rows).row(0).transpose();
  }
  return s;
}

}  // namespace aircombat::io
