#include "fastadd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace fastadd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as native little-endian");

namespace {

constexpr char kMagic[8] = {'F', 'F', 'C', 'K', 'P', 'T', '0', '1'};

}  // namespace

template <typename T>
void save_checkpoint(const ModelParams<T>& model, const std::string& path) {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < model.params.names.size(); ++i) {
    const Tensor<T>& t = model.params.values[i];
    const std::uint64_t nbytes = t.numel() * sizeof(T);
    header[model.params.names[i]] = {
        {"dtype", Tensor<T>::dtype()},
        {"shape", t.shape()},
        {"offset", offset},
        {"nbytes", nbytes},
    };
    offset += nbytes;
  }
  const std::string header_text = header.dump();
  if (header_text.size() > 0xFFFFFFFFull) throw CheckpointError("checkpoint header too large");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t header_len = static_cast<std::uint32_t>(header_text.size());
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const Tensor<T>& t : model.params.values) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(T)));
  }
  out.flush();
  if (!out) throw CheckpointError("failed writing checkpoint to '" + path + "'");
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& path, const FastformerConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointFormatError("bad checkpoint magic in '" + path + "'");
  }
  std::uint32_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + sizeof(kMagic), sizeof(header_len));
  const std::size_t header_start = sizeof(kMagic) + sizeof(std::uint32_t);
  if (bytes.size() < header_start + header_len) {
    throw CheckpointFormatError("checkpoint header extends past end of file");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_start),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(header_start + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw CheckpointFormatError("checkpoint header must be a JSON object");

  const char* payload = bytes.data() + header_start + header_len;
  const std::size_t payload_size = bytes.size() - header_start - header_len;

  const std::vector<ParamSpec> layout = param_layout(config);
  for (const auto& item : header.items()) {
    bool known = false;
    for (const ParamSpec& spec : layout) {
      if (spec.name == item.key()) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw CheckpointShapeError("checkpoint contains unexpected parameter '" + item.key() + "'");
    }
  }

  ModelParams<T> model;
  model.config = config;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
  for (const ParamSpec& spec : layout) {
    if (!header.contains(spec.name)) {
      throw CheckpointShapeError("checkpoint is missing parameter '" + spec.name + "'");
    }
    const nlohmann::json& entry = header.at(spec.name);
    if (!entry.contains("dtype") || !entry.contains("shape") || !entry.contains("offset") ||
        !entry.contains("nbytes")) {
      throw CheckpointFormatError("checkpoint entry for '" + spec.name + "' is incomplete");
    }
    if (entry.at("dtype").get<std::string>() != Tensor<T>::dtype()) {
      throw CheckpointShapeError("parameter '" + spec.name + "' has dtype " +
                                 entry.at("dtype").get<std::string>() + ", expected " +
                                 Tensor<T>::dtype());
    }
    const std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != spec.shape) {
      throw CheckpointShapeError("parameter '" + spec.name + "' has shape " + shape_str(shape) +
                                 ", expected " + shape_str(spec.shape));
    }
    Tensor<T> t(shape);
    const std::uint64_t nbytes = entry.at("nbytes").get<std::uint64_t>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    if (nbytes != t.numel() * sizeof(T)) {
      throw CheckpointShapeError("parameter '" + spec.name + "' declares " +
                                 std::to_string(nbytes) + " bytes, expected " +
                                 std::to_string(t.numel() * sizeof(T)));
    }
    if (offset + nbytes > payload_size) {
      throw CheckpointTruncatedError("payload truncated: parameter '" + spec.name + "' needs " +
                                     std::to_string(offset + nbytes) + " bytes, payload has " +
                                     std::to_string(payload_size));
    }
    extents.emplace_back(offset, nbytes);
    std::memcpy(t.data(), payload + offset, nbytes);
    model.params.add(spec.name, std::move(t));
  }

  std::sort(extents.begin(), extents.end());
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i].first < extents[i - 1].first + extents[i - 1].second) {
      throw CheckpointFormatError("checkpoint parameter extents overlap");
    }
  }
  return model;
}

template void save_checkpoint(const ModelParams<float>&, const std::string&);
template void save_checkpoint(const ModelParams<double>&, const std::string&);
template ModelParams<float> load_checkpoint(const std::string&, const FastformerConfig&);
template ModelParams<double> load_checkpoint(const std::string&, const FastformerConfig&);

}  // namespace fastadd
