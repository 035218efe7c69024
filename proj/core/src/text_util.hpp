// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace visagent::detail
{

inline bool is_space(char c) noexcept
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) noexcept
{
    while (!s.empty() && is_space(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && is_space(s.back()))
        s.remove_suffix(1);
    return s;
}

/// Lowercase ASCII, collapse whitespace runs, strip surrounding punctuation.
std::string normalize_text(std::string_view s);

std::vector<std::string> split_words(std::string_view s);

/// Replaces invalid UTF-8 sequences so the text can be serialized as JSON.
std::string sanitize_utf8(std::string_view s);

inline std::uint64_t fnv1a(std::string_view s) noexcept
{
    auto h = std::uint64_t { 14695981039346656037ull };
    for (unsigned char c: s)
    {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace visagent::detail
