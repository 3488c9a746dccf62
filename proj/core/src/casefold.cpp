#include "kronembed/casefold.hpp"

#include <algorithm>
#include <array>
#include <cstdint>

#include "kronembed/utf8.hpp"

namespace kronembed {
namespace {

struct FoldEntry {
  char32_t from;
  std::uint8_t count;
  std::array<char32_t, 3> to;
};

constexpr FoldEntry kFoldTable[] = {
#include "casefold_table.inc"
};

static_assert(std::is_sorted(std::begin(kFoldTable), std::end(kFoldTable),
                             [](const FoldEntry& a, const FoldEntry& b) { return a.from < b.from; }));

const FoldEntry* find_fold(char32_t cp) noexcept {
  const auto* it = std::lower_bound(std::begin(kFoldTable), std::end(kFoldTable), cp,
                                    [](const FoldEntry& e, char32_t c) { return e.from < c; });
  return (it != std::end(kFoldTable) && it->from == cp) ? it : nullptr;
}

// Length of the valid UTF-8 sequence at `i`, or 0.
std::size_t sequence_length(std::string_view s, std::size_t i) {
  for (std::size_t n = 1; n <= 4 && i + n <= s.size(); ++n) {
    if (utf8::is_valid(s.substr(i, n))) return n;
  }
  return 0;
}

}  // namespace

std::string casefold(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    const auto b = static_cast<unsigned char>(text[i]);
    if (b < 0x80) {
      out.push_back(b >= 'A' && b <= 'Z' ? static_cast<char>(b + 32) : static_cast<char>(b));
      ++i;
      continue;
    }
    const std::size_t n = sequence_length(text, i);
    if (n == 0) {
      out.push_back(text[i++]);
      continue;
    }
    const char32_t cp = utf8::decode(text.substr(i, n)).front();
    if (const FoldEntry* e = find_fold(cp)) {
      for (std::uint8_t k = 0; k < e->count; ++k) utf8::append(out, e->to[k]);
    } else {
      out.append(text.substr(i, n));
    }
    i += n;
  }
  return out;
}

}  // namespace kronembed
