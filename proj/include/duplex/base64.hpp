#pragma once

#include <string>
#include <string_view>

namespace duplex {

std::string base64_encode(std::string_view bytes);
/// Throws PreconditionError on malformed input.
std::string base64_decode(std::string_view text);

}  // namespace duplex
