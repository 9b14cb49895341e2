#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stcat/config.hpp"
#include "stcat/nn/parameters.hpp"
#include "stcat/tensor/adamw.hpp"
#include "stcat/workbench/dataset_io.hpp"

namespace stcat::io {

inline constexpr const char* kCheckpointFormat = "stcat-checkpoint-1";

/// Parameters, optimizer moments, step and config. On disk a checkpoint is a
/// directory holding index.json and tensors.bin (little-endian float32).
struct Checkpoint {
  ModelConfig config;
  std::size_t step = 0;
  ParameterStore<float> params;
  AdamWState<float> optimizer;
};

namespace detail {

struct IndexRow {
  std::string name;
  Shape shape;
  std::size_t offset = 0, length = 0;
};

}  // namespace detail

inline void save_checkpoint(const fs::path& dir, const Checkpoint& ck) {
  fs::create_directories(dir);
  const auto blob_path = dir / "tensors.bin";
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw DataError(blob_path, "cannot open for writing");

  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  auto put = [&](const std::string& name, const Tensor<float>& t) {
    const std::size_t bytes = t.size() * sizeof(float);
    blob.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(bytes));
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"length", bytes}});
    offset += bytes;
  };
  const auto& values = ck.params.values();
  for (std::size_t i = 0; i < values.size(); ++i) put(ck.params.name(i), values[i]);
  for (std::size_t i = 0; i < ck.optimizer.m.size(); ++i) put("adamw.m/" + ck.params.name(i), ck.optimizer.m[i]);
  for (std::size_t i = 0; i < ck.optimizer.v.size(); ++i) put("adamw.v/" + ck.params.name(i), ck.optimizer.v[i]);
  if (!blob) throw DataError(blob_path, "write failed");

  nlohmann::json index = {{"format", kCheckpointFormat},
                          {"step", ck.step},
                          {"optimizer_step", ck.optimizer.step},
                          {"config", to_json(ck.config)},
                          {"blob", "tensors.bin"},
                          {"blob_length", offset},
                          {"tensors", tensors}};
  std::ofstream os(dir / "index.json", std::ios::trunc);
  if (!os) throw DataError(dir / "index.json", "cannot open for writing");
  os << index.dump(2) << '\n';
}

/// Loads and cross-checks index and blob. With `expected`, the stored
/// parameter names and shapes must match that store exactly.
inline Checkpoint load_checkpoint(const fs::path& dir, const ParameterStore<float>* expected = nullptr) {
  const auto index_path = dir / "index.json";
  nlohmann::json index;
  {
    std::ifstream is(index_path);
    if (!is) throw DataError(index_path, "cannot open for reading");
    try {
      index = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& ex) {
      throw DataError(index_path, ex.what());
    }
  }
  Checkpoint ck;
  std::vector<detail::IndexRow> rows;
  std::size_t blob_length = 0;
  try {
    if (index.at("format").get<std::string>() != kCheckpointFormat) {
      throw DataError(index_path, "unknown format '" + index.at("format").get<std::string>() + "'");
    }
    ck.step = index.at("step").get<std::size_t>();
    ck.optimizer.step = index.at("optimizer_step").get<std::size_t>();
    ck.config = config_from_json(index.at("config"));
    blob_length = index.at("blob_length").get<std::size_t>();
    for (const auto& t : index.at("tensors")) {
      rows.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>(), t.at("offset").get<std::size_t>(),
                      t.at("length").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(index_path, std::string("malformed index: ") + ex.what());
  } catch (const ConfigError& ex) {
    throw DataError(index_path, ex.what());
  }

  const auto blob_path = dir / "tensors.bin";
  const auto bytes = read_file(blob_path);
  if (bytes.size() != blob_length) {
    throw DataError(blob_path, "expected " + std::to_string(blob_length) + " bytes, found " +
                                   std::to_string(bytes.size()));
  }
  std::size_t expect_offset = 0;
  std::vector<Tensor<float>> m, v;
  for (const auto& r : rows) {
    if (r.shape.empty() || numel(r.shape) == 0) throw DataError(index_path, "tensor '" + r.name + "' has empty shape");
    if (r.offset != expect_offset || r.length != numel(r.shape) * sizeof(float) ||
        r.offset + r.length > bytes.size()) {
      throw DataError(index_path, "tensor '" + r.name + "' offset/length " + std::to_string(r.offset) + "/" +
                                      std::to_string(r.length) + " inconsistent with shape " + to_string(r.shape) +
                                      " and blob of " + std::to_string(bytes.size()) + " bytes");
    }
    expect_offset += r.length;
    Tensor<float> t(r.shape);
    std::memcpy(t.data.data(), bytes.data() + r.offset, r.length);
    if (r.name.rfind("adamw.m/", 0) == 0) {
      m.push_back(std::move(t));
    } else if (r.name.rfind("adamw.v/", 0) == 0) {
      v.push_back(std::move(t));
    } else {
      ck.params.add(r.name, std::move(t));
    }
  }
  if (expect_offset != bytes.size()) throw DataError(blob_path, "trailing bytes after last tensor");
  if (m.size() != v.size() || (!m.empty() && m.size() != ck.params.size())) {
    throw DataError(index_path, "optimizer state covers " + std::to_string(m.size()) + "/" +
                                    std::to_string(v.size()) + " tensors for " + std::to_string(ck.params.size()) +
                                    " parameters");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].shape != ck.params.values()[i].shape || v[i].shape != m[i].shape) {
      throw DataError(index_path, "optimizer moment shape mismatch for '" + ck.params.name(i) + "'");
    }
  }
  ck.optimizer.m = std::move(m);
  ck.optimizer.v = std::move(v);

  if (expected) {
    if (expected->size() != ck.params.size()) {
      throw DataError(index_path, "checkpoint has " + std::to_string(ck.params.size()) + " tensors, model expects " +
                                      std::to_string(expected->size()));
    }
    for (std::size_t i = 0; i < expected->size(); ++i) {
      const auto id = ck.params.find(expected->name(i));
      if (!id) throw DataError(index_path, "missing tensor '" + expected->name(i) + "'");
      const auto& want = expected->values()[i].shape;
      const auto& got = ck.params.value(*id).shape;
      if (want != got) {
        throw DataError(index_path, "tensor '" + expected->name(i) + "' has shape " + to_string(got) +
                                        ", model expects " + to_string(want));
      }
    }
  }
  return ck;
}

}  // namespace stcat::io
