#pragma once

#include <span>

namespace lasi {

// Reserved vocabulary ids, fixed across the whole pipeline.
namespace tok {
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kCls = 2;
inline constexpr int kSep = 3;
inline constexpr int kMask = 4;
inline constexpr int kBos = 5;
inline constexpr int kEos = 6;
inline constexpr int kNumSpecial = 7;

inline bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

/// Length up to and including the last non-[PAD] token.
inline int effective_len(std::span<const int> ids) {
  int n = static_cast<int>(ids.size());
  while (n > 0 && ids[static_cast<size_t>(n - 1)] == kPad) --n;
  return n;
}
}  // namespace tok

}  // namespace lasi
