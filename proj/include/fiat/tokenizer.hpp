#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace fiat {

// Byte-level vocabulary: token id b is byte b, plus three reserved ids.
inline constexpr int kBosToken = 256;
inline constexpr int kEosToken = 257;
inline constexpr int kPadToken = 258;
inline constexpr int kMinVocabSize = 259;

inline bool is_reserved_token(int id) { return id >= 256; }

/// [BOS, bytes..., EOS]
std::vector<int> tokenize(std::string_view text);

/// Bytes without the BOS/EOS frame.
std::vector<int> tokenize_bytes(std::string_view text);

/// Inverse of tokenize: accepts an optional leading BOS and trailing EOS;
/// any other reserved id raises ReservedToken.
std::string detokenize(const std::vector<int>& tokens);

}  // namespace fiat
