#pragma once

// Checkpoint directory layout:
//   manifest.json  architecture, parameter blocks, config hash, step count
//   params.bin     raw little-endian float32 parameters in block order

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/crc.hpp>
#include <json.hpp>

#include "mzi/nn.hpp"

namespace mzi {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written in host order");

struct checkpoint_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kCheckpointFormat = "mzi-qnetwork/1";

inline std::string crc32_hex(const void* data, std::size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << crc.checksum();
  return os.str();
}

inline std::string architecture_hash(const nn::NetworkSpec& spec) {
  const std::string d = spec.describe();
  return crc32_hex(d.data(), d.size());
}

inline nlohmann::json network_spec_to_json(const nn::NetworkSpec& s) {
  nlohmann::json convs = nlohmann::json::array();
  for (const auto& c : s.convs) convs.push_back({{"out_channels", c.out_channels}, {"kernel", c.kernel}, {"stride", c.stride}});
  return {{"in_channels", s.in_channels}, {"in_size", s.in_size}, {"convs", convs},
          {"dense_units", s.dense_units}, {"n_actions", s.n_actions}};
}

inline nn::NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  nn::NetworkSpec s;
  s.in_channels = j.at("in_channels").get<int>();
  s.in_size = j.at("in_size").get<int>();
  s.convs.clear();
  for (const auto& c : j.at("convs"))
    s.convs.push_back({c.at("out_channels").get<int>(), c.at("kernel").get<int>(), c.at("stride").get<int>()});
  s.dense_units = j.at("dense_units").get<int>();
  s.n_actions = j.at("n_actions").get<int>();
  return s;
}

inline void save_checkpoint(const nn::QNetwork<float>& net, const std::filesystem::path& dir, std::int64_t step = 0) {
  std::filesystem::create_directories(dir);
  const auto& params = net.parameters();
  const std::size_t bytes = params.size() * sizeof(float);

  nlohmann::json layers = nlohmann::json::array();
  for (const auto& b : net.blocks()) layers.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", b.offset}});
  const nlohmann::json manifest = {
      {"format", kCheckpointFormat},
      {"architecture", net.spec().describe()},
      {"config_hash", architecture_hash(net.spec())},
      {"network", network_spec_to_json(net.spec())},
      {"layers", layers},
      {"step", step},
      {"dtype", "float32"},
      {"byte_order", "little"},
      {"parameter_count", params.size()},
      {"blob", "params.bin"},
      {"blob_bytes", bytes},
      {"blob_crc32", crc32_hex(params.data(), bytes)},
  };

  // Blob first, manifest last, each via rename, so a readable manifest
  // always describes a complete blob.
  const auto blob_tmp = dir / "params.bin.tmp";
  {
    std::ofstream out(blob_tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(params.data()), std::streamsize(bytes));
    if (!out) throw checkpoint_error("cannot write " + blob_tmp.string());
  }
  std::filesystem::rename(blob_tmp, dir / "params.bin");
  const auto manifest_tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(manifest_tmp, std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out) throw checkpoint_error("cannot write " + manifest_tmp.string());
  }
  std::filesystem::rename(manifest_tmp, dir / "manifest.json");
}

struct LoadedCheckpoint {
  nn::QNetwork<float> network;
  std::int64_t step = 0;
};

// Throws checkpoint_error on any inconsistency; nothing is returned
// partially filled. With `expected`, the stored architecture must match it.
inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir,
                                        const std::optional<nn::NetworkSpec>& expected = std::nullopt) {
  nlohmann::json manifest;
  {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw checkpoint_error("missing manifest in " + dir.string());
    try {
      in >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw checkpoint_error(std::string("corrupt manifest: ") + e.what());
    }
  }

  nn::NetworkSpec spec;
  std::string stored_hash, blob_crc, blob_name;
  std::size_t count = 0, blob_bytes = 0;
  std::int64_t step = 0;
  try {
    if (manifest.at("format").get<std::string>() != kCheckpointFormat) throw checkpoint_error("unknown checkpoint format");
    if (manifest.at("dtype").get<std::string>() != "float32") throw checkpoint_error("unsupported dtype");
    spec = network_spec_from_json(manifest.at("network"));
    stored_hash = manifest.at("config_hash").get<std::string>();
    count = manifest.at("parameter_count").get<std::size_t>();
    blob_name = manifest.at("blob").get<std::string>();
    blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
    blob_crc = manifest.at("blob_crc32").get<std::string>();
    step = manifest.at("step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw checkpoint_error(std::string("corrupt manifest: ") + e.what());
  }

  if (architecture_hash(spec) != stored_hash) throw checkpoint_error("manifest config hash does not match its network description");
  if (expected && architecture_hash(*expected) != stored_hash)
    throw checkpoint_error("incompatible checkpoint: architecture " + manifest.at("architecture").get<std::string>() +
                           " (hash " + stored_hash + "), expected " + expected->describe() + " (hash " +
                           architecture_hash(*expected) + ")");

  nn::QNetwork<float> net;
  try {
    net = nn::QNetwork<float>(spec, 0);
  } catch (const std::invalid_argument& e) {
    throw checkpoint_error(std::string("invalid network in manifest: ") + e.what());
  }
  if (net.parameter_count() != count || blob_bytes != count * sizeof(float))
    throw checkpoint_error("parameter count does not match the architecture");

  nn::ParamVector<float> params(count);
  {
    std::ifstream in(dir / blob_name, std::ios::binary);
    if (!in) throw checkpoint_error("missing parameter blob " + (dir / blob_name).string());
    in.seekg(0, std::ios::end);
    if (std::size_t(in.tellg()) != blob_bytes)
      throw checkpoint_error("parameter blob has " + std::to_string(std::size_t(in.tellg())) + " bytes, expected " +
                             std::to_string(blob_bytes));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(params.data()), std::streamsize(blob_bytes));
    if (!in) throw checkpoint_error("short read on parameter blob");
  }
  if (crc32_hex(params.data(), blob_bytes) != blob_crc) throw checkpoint_error("parameter blob checksum mismatch");

  net.parameters() = std::move(params);
  return {std::move(net), step};
}

}  // namespace mzi
