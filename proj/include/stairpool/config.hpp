#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "stairpool/data.hpp"
#include "stairpool/train.hpp"
#include "stairpool/unet.hpp"

namespace stairpool {

struct DataConfig {
  std::int64_t n_train = 200;
  std::int64_t n_val = 50;
  std::int64_t size = 64;
  std::uint64_t seed = 7;
  bool operator==(const DataConfig&) const = default;
};

struct SearchConfig {
  bool joint = false;
  std::int64_t samples = 0;  // validation samples probed; 0 means all
  bool operator==(const SearchConfig&) const = default;
};

// Everything a run needs. Text form is `key = value` lines with dotted keys.
struct RunConfig {
  ModelConfig model;
  std::uint64_t model_seed = 0;
  TrainConfig train;
  DataConfig data;
  SearchConfig search;
  std::int64_t correlate_variants = 5;

  // Field validation of every section. Throws InvalidConfig.
  void validate() const;
  bool operator==(const RunConfig&) const = default;

  DatasetSpec train_spec() const;
  DatasetSpec val_spec() const;
};

// Unknown keys, malformed values and duplicate keys throw InvalidConfig
// naming the key and line. Missing keys keep their defaults.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

// Lossless text form: parse_config(to_config_text(c)) == c.
std::string to_config_text(const RunConfig& cfg);

// model.* lines only, as stored in checkpoints.
std::string model_config_text(const ModelConfig& model);
ModelConfig parse_model_config(std::string_view text);

}  // namespace stairpool
