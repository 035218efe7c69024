// SPDX-License-Identifier: Apache-2.0
#include <visagent/endpoint.hpp>

#include <visagent/errors.hpp>

#include <fmt/format.h>

#include <fstream>

namespace visagent
{

std::string_view to_string(Role role) noexcept
{
    switch (role)
    {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
        case Role::Tool: return "tool";
    }
    return "user";
}

std::optional<Role> parse_role(std::string_view name) noexcept
{
    if (name == "system")
        return Role::System;
    if (name == "user")
        return Role::User;
    if (name == "assistant")
        return Role::Assistant;
    if (name == "tool")
        return Role::Tool;
    return std::nullopt;
}

Segment Segment::make_text(std::string text)
{
    auto s = Segment {};
    s.kind = Kind::Text;
    s.text = std::move(text);
    return s;
}

Segment Segment::make_image(std::string ref, cv::Mat image)
{
    auto s = Segment {};
    s.kind = Kind::Image;
    s.image_ref = std::move(ref);
    s.width = image.cols;
    s.height = image.rows;
    s.image = std::move(image);
    return s;
}

std::string first_user_text(std::span<const Message> messages)
{
    for (const auto& message: messages)
    {
        if (message.role != Role::User)
            continue;
        auto out = std::string {};
        for (const auto& segment: message.segments)
            if (segment.is_text())
                out += segment.text;
        return out;
    }
    return {};
}

namespace
{

std::string expand_turn(const nlohmann::json& entry)
{
    if (entry.is_string())
        return entry.get<std::string>();
    if (entry.is_object() && entry.contains("repeat") && entry.contains("times"))
    {
        const auto unit = entry.at("repeat").get<std::string>();
        const auto times = entry.at("times").get<std::int64_t>();
        if (times < 0 || times > 100'000'000)
            throw ConfigError("script 'times' out of range");
        auto out = std::string {};
        out.reserve(unit.size() * static_cast<std::size_t>(times) + 64);
        for (std::int64_t i = 0; i < times; ++i)
            out += unit;
        if (entry.contains("suffix"))
            out += entry.at("suffix").get<std::string>();
        return out;
    }
    throw ConfigError("script turn must be a string or {\"repeat\", \"times\"}");
}

std::vector<std::string> expand_turns(const nlohmann::json& list)
{
    if (!list.is_array())
        throw ConfigError("script turns must be an array");
    auto out = std::vector<std::string> {};
    for (const auto& entry: list)
        out.push_back(expand_turn(entry));
    return out;
}

} // namespace

ScriptedEndpoint::ScriptedEndpoint(std::vector<Script> scripts): _scripts(std::move(scripts))
{
    if (_scripts.empty())
        throw ConfigError("scripted endpoint needs at least one script");
    for (const auto& s: _scripts)
        if (s.rollouts.empty())
            throw ConfigError("script has no rollout variants");
}

ScriptedEndpoint::ScriptedEndpoint(std::vector<std::string> turns):
    ScriptedEndpoint(std::vector<Script> { Script { std::nullopt, { std::move(turns) } } })
{
}

ScriptedEndpoint ScriptedEndpoint::from_json(const nlohmann::json& doc)
{
    try
    {
        if (doc.is_array())
            return ScriptedEndpoint(expand_turns(doc));
        if (!doc.is_object() || !doc.contains("scripts") || !doc.at("scripts").is_array())
            throw ConfigError("script file must be an array of turns or {\"scripts\": [...]}");

        auto scripts = std::vector<Script> {};
        for (const auto& entry: doc.at("scripts"))
        {
            auto script = Script {};
            if (entry.contains("match"))
                script.match = entry.at("match").get<std::string>();
            if (entry.contains("turns"))
                script.rollouts.push_back(expand_turns(entry.at("turns")));
            if (entry.contains("rollouts"))
                for (const auto& variant: entry.at("rollouts"))
                    script.rollouts.push_back(expand_turns(variant));
            scripts.push_back(std::move(script));
        }
        return ScriptedEndpoint(std::move(scripts));
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ConfigError(fmt::format("invalid script: {}", e.what()));
    }
}

ScriptedEndpoint ScriptedEndpoint::from_file(const std::filesystem::path& path)
{
    auto in = std::ifstream(path);
    if (!in)
        throw ConfigError(fmt::format("cannot open script {}", path.string()));
    auto doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded())
        throw ConfigError(fmt::format("script {} is not valid JSON", path.string()));
    return from_json(doc);
}

Generation ScriptedEndpoint::generate(const ChatRequest& request) const
{
    const auto prompt = first_user_text(request.messages);
    for (const auto& script: _scripts)
    {
        if (script.match && prompt.find(*script.match) == std::string::npos)
            continue;
        const auto& turns = script.rollouts[request.rollout_index % script.rollouts.size()];
        if (request.turn_index >= turns.size())
            throw GenerationError(fmt::format("script exhausted at turn {}", request.turn_index));
        return Generation { turns[request.turn_index], std::nullopt };
    }
    throw GenerationError("no script matches the prompt");
}

std::string ScriptedEndpoint::describe() const
{
    return fmt::format("scripted({} script{})", _scripts.size(), _scripts.size() == 1 ? "" : "s");
}

} // namespace visagent
