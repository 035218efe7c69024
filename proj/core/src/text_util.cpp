// SPDX-License-Identifier: Apache-2.0
#include "text_util.hpp"

#include <nlohmann/json.hpp>

#include <cctype>

namespace visagent::detail
{

namespace
{
bool is_edge_punct(char c) noexcept
{
    switch (c)
    {
        case '.':
        case ',':
        case ';':
        case ':':
        case '!':
        case '?':
        case '"':
        case '\'':
        case '(':
        case ')':
        case '[':
        case ']':
        case '`':
        case '*': return true;
        default: return false;
    }
}
} // namespace

std::string normalize_text(std::string_view s)
{
    auto out = std::string {};
    out.reserve(s.size());
    auto pending_space = false;
    for (char c: s)
    {
        if (is_space(c))
        {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space)
        {
            out += ' ';
            pending_space = false;
        }
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    auto view = std::string_view(out);
    while (!view.empty() && (is_edge_punct(view.front()) || is_space(view.front())))
        view.remove_prefix(1);
    while (!view.empty() && (is_edge_punct(view.back()) || is_space(view.back())))
        view.remove_suffix(1);
    return std::string(view);
}

std::vector<std::string> split_words(std::string_view s)
{
    auto words = std::vector<std::string> {};
    auto current = std::string {};
    for (char c: s)
    {
        if (is_space(c))
        {
            if (!current.empty())
                words.push_back(std::move(current));
            current.clear();
        }
        else
        {
            current += c;
        }
    }
    if (!current.empty())
        words.push_back(std::move(current));
    return words;
}

std::string sanitize_utf8(std::string_view s)
{
    const auto encoded =
        nlohmann::json(std::string(s)).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    return nlohmann::json::parse(encoded).get<std::string>();
}

} // namespace visagent::detail
