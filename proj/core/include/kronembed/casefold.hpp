#pragma once

#include <string>
#include <string_view>

namespace kronembed {

/// Full Unicode case folding (the mapping Python's str.casefold applies).
/// Bytes that are not part of valid UTF-8 are copied through unchanged.
std::string casefold(std::string_view text);

}  // namespace kronembed
