#include "fiat/checkpoint.hpp"

#include <openssl/sha.h>

#include <cstring>
#include <fstream>

namespace fiat {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static const char* hex = "0123456789abcdef";
  std::string out(2 * SHA256_DIGEST_LENGTH, '0');
  for (size_t i = 0; i < SHA256_DIGEST_LENGTH; ++i) {
    out[2 * i] = hex[digest[i] >> 4];
    out[2 * i + 1] = hex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::IoError, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

void write_container(const std::filesystem::path& path, nlohmann::json header,
                     const std::vector<std::pair<std::string, const Mat*>>& tensors) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, mat] : tensors) {
    list.push_back({{"name", name}, {"rows", mat->rows()}, {"cols", mat->cols()}});
  }
  header["tensors"] = std::move(list);
  std::string header_bytes = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::IoError, "cannot write " + path.string());
  uint64_t len = header_bytes.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (const auto& [name, mat] : tensors) {
    // Mat is row-major, so the buffer already has the on-disk layout.
    out.write(reinterpret_cast<const char*>(mat->data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(mat->size())));
  }
  require(out.good(), ErrorKind::IoError, "short write to " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::IoError, "cannot open " + path.string());
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  require(in.good() && len > 0 && len < (1ULL << 31), ErrorKind::SchemaViolation,
          "corrupt container header in " + path.string());
  std::string header_bytes(len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(len));
  require(in.good(), ErrorKind::SchemaViolation, "truncated header in " + path.string());

  Container c;
  c.header = nlohmann::json::parse(header_bytes, nullptr, false);
  require(!c.header.is_discarded(), ErrorKind::SchemaViolation,
          "container header is not valid JSON in " + path.string());
  require(c.header.contains("tensors"), ErrorKind::SchemaViolation,
          "container header lists no tensors in " + path.string());
  for (const auto& entry : c.header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    auto rows = entry.at("rows").get<Eigen::Index>();
    auto cols = entry.at("cols").get<Eigen::Index>();
    require(rows > 0 && cols > 0, ErrorKind::SchemaViolation,
            "bad tensor shape for " + name + " in " + path.string());
    Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
    require(in.good(), ErrorKind::SchemaViolation,
            "truncated tensor data for " + name + " in " + path.string());
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  nlohmann::json header = {
      {"format_version", 1},
      {"kind", to_string(params.kind)},
      {"seed", params.seed},
      {"config", params.config},
  };
  write_container(path, std::move(header), params.named_tensors());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::ArtifactNotFound,
          "checkpoint not found: " + path.string());
  Container c = read_container(path);
  ModelConfig config = c.header.at("config").get<ModelConfig>();
  config.validate();

  ModelParams params;
  params.config = config;
  params.kind = checkpoint_kind_from_string(c.header.at("kind").get<std::string>());
  params.seed = c.header.at("seed").get<uint64_t>();
  params.layers.resize(config.n_layers);
  auto slots = params.named_tensors();
  require(slots.size() == c.tensors.size(), ErrorKind::SchemaViolation,
          "checkpoint tensor count mismatch in " + path.string());
  for (size_t i = 0; i < slots.size(); ++i) {
    require(slots[i].first == c.tensors[i].first, ErrorKind::SchemaViolation,
            "unexpected tensor order: wanted " + slots[i].first + ", found " +
                c.tensors[i].first);
    check_finite(c.tensors[i].second, slots[i].first.c_str());
    *slots[i].second = std::move(c.tensors[i].second);
  }
  return params;
}

}  // namespace fiat
