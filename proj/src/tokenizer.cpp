#include "fiat/tokenizer.hpp"

#include "fiat/errors.hpp"

namespace fiat {

std::vector<int> tokenize(std::string_view text) {
  std::vector<int> tokens;
  tokens.reserve(text.size() + 2);
  tokens.push_back(kBosToken);
  for (unsigned char c : text) tokens.push_back(static_cast<int>(c));
  tokens.push_back(kEosToken);
  return tokens;
}

std::vector<int> tokenize_bytes(std::string_view text) {
  std::vector<int> tokens;
  tokens.reserve(text.size());
  for (unsigned char c : text) tokens.push_back(static_cast<int>(c));
  return tokens;
}

std::string detokenize(const std::vector<int>& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) {
    int id = tokens[i];
    if (id == kBosToken && i == 0) continue;
    if (id == kEosToken && i + 1 == tokens.size()) continue;
    require(id >= 0 && id < 256, ErrorKind::ReservedToken,
            "detokenize: reserved or invalid token id " + std::to_string(id) +
                " at position " + std::to_string(i));
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

}  // namespace fiat
