#pragma once

// Checkpoint container: "VASTCKPT1" magic, a u32 length-prefixed JSON header
// (free-form metadata plus an ordered blob directory with shapes), then the
// float32 little-endian payloads back to back. Weight fingerprints hash the
// payload bytes in directory order.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vast/nn.hpp"

namespace vast {

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();

  struct Blob {
    std::string name;
    int rows = 0, cols = 0;
    std::vector<float> data;
  };
  std::vector<Blob> blobs;

  void add_blob(const std::string& name, int rows, int cols, std::vector<float> data);
  const Blob* find(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  // FNV-1a over all payload bytes in directory order.
  uint64_t weights_hash() const;

  // Param store round-trip. Loading requires every store param to be present
  // with an exactly matching shape.
  void put_params(const nn::ParamStore<float>& ps, const std::string& prefix = "");
  void get_params(nn::ParamStore<float>& ps, const std::string& prefix = "") const;
};

}  // namespace vast
