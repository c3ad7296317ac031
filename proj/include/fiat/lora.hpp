#pragma once

#include <filesystem>
#include <map>
#include <set>

#include "fiat/model.hpp"

namespace fiat {

struct AdapterConfig {
  int rank = 4;
  double alpha = 8.0;
  std::set<Target> targets = {Target::Q, Target::V};

  void validate(const ModelConfig& model) const;
  bool operator==(const AdapterConfig&) const = default;
};

void to_json(nlohmann::json& j, const AdapterConfig& c);
void from_json(const nlohmann::json& j, AdapterConfig& c);

/// One low-rank pair per targeted matrix W (d_out × d_in):
/// a is rank × d_in, b is d_out × rank, and the adapted weight is
/// W + (alpha / rank) · b · a.
struct AdapterPair {
  Mat a;
  Mat b;
};

struct AdapterSet {
  AdapterConfig config;
  uint64_t seed = 0;
  std::string base_checkpoint_sha256;  // empty until attached to a saved base
  bool merged = false;
  std::vector<std::map<Target, AdapterPair>> layers;

  double scaling() const { return config.alpha / static_cast<double>(config.rank); }
  std::vector<std::pair<std::string, const Mat*>> named_tensors() const;
  std::vector<std::pair<std::string, Mat*>> named_tensors();
  size_t parameter_count() const;
};

/// a ~ N(0, 0.02), b = 0: the adapted model equals the base model at init.
AdapterSet init_adapters(const ModelParams& params, const AdapterConfig& config, uint64_t seed);

Mat adapted_forward(const ModelParams& params, const AdapterSet& adapters,
                    const std::vector<int>& tokens);

/// Materializes W + (alpha/rank)·b·a into a copy of the base parameters.
/// Merging is not idempotent, so a second merge of the same set raises
/// AlreadyMerged.
ModelParams merge(const ModelParams& params, AdapterSet& adapters);

double trainable_fraction(const ModelParams& params, const AdapterSet& adapters);

void save_adapters(const std::filesystem::path& path, const AdapterSet& adapters);
AdapterSet load_adapters(const std::filesystem::path& path);

}  // namespace fiat
