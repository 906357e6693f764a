#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hiercomm {

// Number of Unicode scalar values in a UTF-8 string. Invalid lead bytes are
// counted as one scalar each so the result is defined for arbitrary input.
std::size_t scalar_count(std::string_view text);

// Lenient UTF-8 decode; bytes that do not form a valid sequence come back
// as their own value so the decode is total.
std::vector<std::uint32_t> decode_utf8(std::string_view text);

// Encode one scalar back to UTF-8.
std::string encode_utf8(std::uint32_t scalar);

// ASCII-range lowercase fold. Non-ASCII bytes pass through unchanged.
std::string fold_case(std::string_view text);

std::string trim(std::string_view text);

bool iequals(std::string_view a, std::string_view b);

// Tokens separated by ASCII whitespace. Used by the scripted backend as an
// approximate token count; live backends report exact usage instead.
std::vector<std::string> whitespace_tokens(std::string_view text);

// 64-bit FNV-1a over the bytes of `data`, rendered as fixed-width hex.
std::string fnv1a_hex(std::string_view data);

}  // namespace hiercomm
