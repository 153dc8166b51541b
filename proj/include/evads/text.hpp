#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace evads::text {

/// Decodes UTF-8 into code points. Invalid bytes decode to U+FFFD one byte at a
/// time, so decode/encode never loses track of input length.
std::vector<char32_t> decode_utf8(std::string_view s);
std::string encode_utf8(const std::vector<char32_t>& cps);
void append_utf8(std::string& out, char32_t cp);

/// Byte offsets of every code point start in `s`, followed by s.size().
std::vector<std::size_t> codepoint_offsets(std::string_view s);
std::size_t codepoint_count(std::string_view s);

/// Han ideographs, kana, Hangul syllables and their compatibility blocks.
bool is_cjk(char32_t cp);
bool is_space(char32_t cp);
/// ASCII punctuation plus the general, CJK and full-width punctuation blocks.
bool is_punctuation(char32_t cp);

/// Mixed-script word count: each CJK character is one word; elsewhere a word is
/// a maximal run of non-space, non-CJK characters containing at least one
/// non-punctuation character.
std::size_t word_count(std::string_view s);

/// Split on whitespace, same token rules as word_count but CJK runs stay whole.
std::vector<std::string> split_whitespace(std::string_view s);

std::string trim(std::string_view s);
/// Collapses every whitespace run to a single ASCII space and trims.
std::string collapse_whitespace(std::string_view s);
std::string to_lower_ascii(std::string_view s);

/// 64-bit FNV-1a. Stable across platforms; used for cache keys and run hashes.
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace evads::text
