#pragma once

#include <filesystem>
#include <string_view>

#include "fiat/model.hpp"

namespace fiat {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Binary container shared by model checkpoints and adapter files:
// u64 little-endian header length, UTF-8 JSON header, then the tensors as
// raw little-endian IEEE-754 doubles in row-major order, in the order the
// header's "tensors" array lists them.

struct Container {
  nlohmann::json header;
  std::vector<std::pair<std::string, Mat>> tensors;
};

void write_container(const std::filesystem::path& path, nlohmann::json header,
                     const std::vector<std::pair<std::string, const Mat*>>& tensors);
Container read_container(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace fiat
