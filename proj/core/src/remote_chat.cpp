// SPDX-License-Identifier: Apache-2.0
#include <visagent/endpoint.hpp>
#include <visagent/errors.hpp>
#include <visagent/image_io.hpp>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <regex>
#include <thread>

namespace visagent
{

RemoteChatEndpoint::RemoteChatEndpoint(RemoteChatConfig config): _config(std::move(config))
{
    static const auto url_re = std::regex(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
    auto match = std::smatch {};
    if (!std::regex_match(_config.base_url, match, url_re))
        throw ConfigError(fmt::format("invalid endpoint base_url '{}'", _config.base_url));
    _scheme_host_port = match[1].str();
    _path_prefix = match[2].matched ? match[2].str() : std::string {};
    while (!_path_prefix.empty() && _path_prefix.back() == '/')
        _path_prefix.pop_back();
    if (_config.max_retries < 0)
        throw ConfigError("max_retries must be non-negative");
}

std::string RemoteChatEndpoint::describe() const
{
    return fmt::format("remote({} @ {})", _config.model, _config.base_url);
}

nlohmann::json RemoteChatEndpoint::build_body(const ChatRequest& request) const
{
    auto messages = nlohmann::json::array();
    for (const auto& message: request.messages)
    {
        // The turn grammar is plain text, so tool output travels as a user turn.
        const auto role = message.role == Role::Tool ? Role::User : message.role;
        auto entry = nlohmann::json::object();
        entry["role"] = to_string(role);

        const auto text_only = std::all_of(message.segments.begin(), message.segments.end(),
                                           [](const Segment& s) { return s.is_text(); });
        if (text_only)
        {
            auto text = std::string {};
            for (const auto& s: message.segments)
                text += s.text;
            entry["content"] = std::move(text);
        }
        else
        {
            auto parts = nlohmann::json::array();
            for (const auto& s: message.segments)
            {
                if (s.is_text())
                {
                    parts.push_back({ { "type", "text" }, { "text", s.text } });
                    continue;
                }
                const auto png = encode_png(s.image);
                parts.push_back({ { "type", "image_url" },
                                  { "image_url", { { "url", "data:image/png;base64," + base64_encode(png) } } } });
            }
            entry["content"] = std::move(parts);
        }
        messages.push_back(std::move(entry));
    }

    auto body = nlohmann::json::object();
    body["model"] = _config.model;
    body["messages"] = std::move(messages);
    body["temperature"] = request.sampling.temperature;
    body["max_tokens"] = request.sampling.max_new_tokens;
    body["seed"] = static_cast<std::int64_t>(request.seed & 0x7fffffffULL);
    return body;
}

namespace
{

Generation parse_completion(const std::string& body)
{
    auto doc = nlohmann::json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw GenerationError("endpoint returned a non-JSON body");
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty())
        throw GenerationError("endpoint response has no choices");

    const auto& message = doc["choices"][0].value("message", nlohmann::json::object());
    auto out = Generation {};
    const auto content = message.value("content", nlohmann::json());
    if (content.is_string())
        out.text = content.get<std::string>();
    else if (content.is_array())
    {
        for (const auto& part: content)
            if (part.is_object() && part.value("type", "") == "text")
                out.text += part.value("text", "");
    }
    else if (!content.is_null())
        throw GenerationError("endpoint message content has an unexpected type");

    if (doc.contains("usage") && doc["usage"].is_object())
    {
        const auto& usage = doc["usage"];
        if (usage.contains("prompt_tokens") && usage.contains("completion_tokens"))
            out.usage = TokenUsage { usage["prompt_tokens"].get<std::int64_t>(),
                                     usage["completion_tokens"].get<std::int64_t>() };
    }
    return out;
}

} // namespace

Generation RemoteChatEndpoint::generate(const ChatRequest& request) const
{
    const auto body = build_body(request).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    auto headers = httplib::Headers {};
    if (!_config.api_key.empty())
        headers.emplace("Authorization", "Bearer " + _config.api_key);

    auto last_error = std::string {};
    for (int attempt = 0; attempt <= _config.max_retries; ++attempt)
    {
        if (attempt > 0)
        {
            const auto delay = _config.backoff * (1LL << (attempt - 1));
            spdlog::warn("{}: attempt {} failed ({}), retrying in {} ms", describe(), attempt, last_error,
                         delay.count());
            std::this_thread::sleep_for(delay);
        }

        auto client = httplib::Client(_scheme_host_port);
        client.set_connection_timeout(_config.timeout);
        client.set_read_timeout(_config.timeout);
        client.set_write_timeout(_config.timeout);

        auto response = client.Post(_path_prefix + "/chat/completions", headers, body, "application/json");
        if (!response)
        {
            last_error = httplib::to_string(response.error());
            continue;
        }
        if (response->status == 429 || response->status >= 500)
        {
            last_error = fmt::format("HTTP {}", response->status);
            continue;
        }
        if (response->status != 200)
            throw GenerationError(fmt::format("endpoint returned HTTP {}: {}", response->status,
                                              response->body.substr(0, 200)));
        return parse_completion(response->body);
    }
    throw TransportError(
        fmt::format("{}: giving up after {} attempts: {}", describe(), _config.max_retries + 1, last_error));
}

} // namespace visagent
