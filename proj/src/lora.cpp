#include "fiat/lora.hpp"

#include <algorithm>

#include "fiat/checkpoint.hpp"
#include "fiat/rng.hpp"

namespace fiat {

void AdapterConfig::validate(const ModelConfig& model) const {
  require(rank > 0, ErrorKind::ConfigError, "adapter rank must be positive");
  require(alpha > 0.0, ErrorKind::ConfigError, "adapter alpha must be positive");
  require(!targets.empty(), ErrorKind::ConfigError, "adapter target set is empty");
  int min_dim = model.d_model;
  if (targets.count(Target::FfIn) || targets.count(Target::FfOut))
    min_dim = std::min(min_dim, std::min(model.d_model, model.d_ff));
  require(rank < min_dim, ErrorKind::RankTooLarge,
          "adapter rank " + std::to_string(rank) + " must be below the smallest targeted dimension " +
              std::to_string(min_dim));
}

void to_json(nlohmann::json& j, const AdapterConfig& c) {
  nlohmann::json targets = nlohmann::json::array();
  for (Target t : c.targets) targets.push_back(to_string(t));
  j = {{"rank", c.rank}, {"alpha", c.alpha}, {"targets", targets}};
}

void from_json(const nlohmann::json& j, AdapterConfig& c) {
  j.at("rank").get_to(c.rank);
  j.at("alpha").get_to(c.alpha);
  c.targets.clear();
  for (const auto& t : j.at("targets")) c.targets.insert(target_from_string(t.get<std::string>()));
}

namespace {

template <typename Set, typename MatPtr>
std::vector<std::pair<std::string, MatPtr>> list_adapter_tensors(Set& s) {
  std::vector<std::pair<std::string, MatPtr>> out;
  for (size_t i = 0; i < s.layers.size(); ++i) {
    for (auto& [target, pair] : s.layers[i]) {
      std::string prefix = "layers." + std::to_string(i) + "." + to_string(target) + ".";
      out.emplace_back(prefix + "a", &pair.a);
      out.emplace_back(prefix + "b", &pair.b);
    }
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, const Mat*>> AdapterSet::named_tensors() const {
  return list_adapter_tensors<const AdapterSet, const Mat*>(*this);
}

std::vector<std::pair<std::string, Mat*>> AdapterSet::named_tensors() {
  return list_adapter_tensors<AdapterSet, Mat*>(*this);
}

size_t AdapterSet::parameter_count() const {
  size_t n = 0;
  for (const auto& [name, mat] : named_tensors()) n += static_cast<size_t>(mat->size());
  return n;
}

AdapterSet init_adapters(const ModelParams& params, const AdapterConfig& config, uint64_t seed) {
  config.validate(params.config);
  Rng rng(seed);
  AdapterSet set;
  set.config = config;
  set.seed = seed;
  set.layers.resize(params.layers.size());
  for (size_t i = 0; i < params.layers.size(); ++i) {
    for (Target t : config.targets) {
      const Mat& w = params.target_matrix(static_cast<int>(i), t);
      AdapterPair pair;
      pair.a = Mat(config.rank, w.cols());
      for (Eigen::Index r = 0; r < pair.a.rows(); ++r)
        for (Eigen::Index c = 0; c < pair.a.cols(); ++c) pair.a(r, c) = rng.gaussian(0.0, 0.02);
      pair.b = Mat::Zero(w.rows(), config.rank);
      set.layers[i].emplace(t, std::move(pair));
    }
  }
  return set;
}

Mat adapted_forward(const ModelParams& params, const AdapterSet& adapters,
                    const std::vector<int>& tokens) {
  return forward_logits(params, tokens, &adapters);
}

ModelParams merge(const ModelParams& params, AdapterSet& adapters) {
  require(!adapters.merged, ErrorKind::AlreadyMerged,
          "adapter set was already merged; merging twice would double the update");
  require(adapters.layers.size() == params.layers.size(), ErrorKind::ShapeMismatch,
          "merge: adapter set was built for a different layer count");
  ModelParams merged_params = params;
  double s = adapters.scaling();
  for (size_t i = 0; i < adapters.layers.size(); ++i) {
    for (const auto& [target, pair] : adapters.layers[i]) {
      Mat& w = merged_params.target_matrix(static_cast<int>(i), target);
      require(pair.b.rows() == w.rows() && pair.a.cols() == w.cols(), ErrorKind::ShapeMismatch,
              "merge: adapter shapes do not match target " + to_string(target));
      w += s * (pair.b * pair.a);
    }
  }
  adapters.merged = true;
  return merged_params;
}

double trainable_fraction(const ModelParams& params, const AdapterSet& adapters) {
  return static_cast<double>(adapters.parameter_count()) /
         static_cast<double>(params.parameter_count());
}

void save_adapters(const std::filesystem::path& path, const AdapterSet& adapters) {
  nlohmann::json header = {
      {"format_version", 1},
      {"adapter_config", adapters.config},
      {"seed", adapters.seed},
      {"base_checkpoint_sha256", adapters.base_checkpoint_sha256},
      {"n_layers", adapters.layers.size()},
  };
  write_container(path, std::move(header), adapters.named_tensors());
}

AdapterSet load_adapters(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::ArtifactNotFound,
          "adapter file not found: " + path.string());
  Container c = read_container(path);
  AdapterSet set;
  set.config = c.header.at("adapter_config").get<AdapterConfig>();
  set.seed = c.header.at("seed").get<uint64_t>();
  set.base_checkpoint_sha256 = c.header.at("base_checkpoint_sha256").get<std::string>();
  set.layers.resize(c.header.at("n_layers").get<size_t>());
  for (auto& [name, mat] : c.tensors) {
    // names look like layers.<i>.<target>.<a|b>
    size_t p0 = name.find('.');
    size_t p1 = name.find('.', p0 + 1);
    size_t p2 = name.find('.', p1 + 1);
    require(p0 != std::string::npos && p1 != std::string::npos && p2 != std::string::npos,
            ErrorKind::SchemaViolation, "bad adapter tensor name: " + name);
    size_t layer = std::stoul(name.substr(p0 + 1, p1 - p0 - 1));
    Target target = target_from_string(name.substr(p1 + 1, p2 - p1 - 1));
    std::string which = name.substr(p2 + 1);
    require(layer < set.layers.size(), ErrorKind::SchemaViolation,
            "adapter tensor for out-of-range layer: " + name);
    AdapterPair& pair = set.layers[layer][target];
    if (which == "a")
      pair.a = std::move(mat);
    else if (which == "b")
      pair.b = std::move(mat);
    else
      raise(ErrorKind::SchemaViolation, "bad adapter tensor name: " + name);
  }
  return set;
}

}  // namespace fiat
