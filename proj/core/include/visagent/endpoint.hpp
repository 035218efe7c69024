// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace visagent
{

enum class Role
{
    System,
    User,
    Assistant,
    Tool,
};

[[nodiscard]] std::string_view to_string(Role role) noexcept;
[[nodiscard]] std::optional<Role> parse_role(std::string_view name) noexcept;

struct Segment
{
    enum class Kind
    {
        Text,
        Image,
    };

    Kind kind = Kind::Text;
    std::string text;
    std::string image_ref; ///< "input:<i>" or "tool:<n>"
    int width = 0;
    int height = 0;
    cv::Mat image; ///< pixels for the wire; not exported

    [[nodiscard]] static Segment make_text(std::string text);
    [[nodiscard]] static Segment make_image(std::string ref, cv::Mat image);

    [[nodiscard]] bool is_text() const noexcept { return kind == Kind::Text; }
    [[nodiscard]] bool is_image() const noexcept { return kind == Kind::Image; }
};

struct Message
{
    Role role = Role::User;
    std::vector<Segment> segments;
    bool trainable = false;
};

struct SamplingParams
{
    double temperature = 1.0;
    int max_new_tokens = 4096;
};

struct ChatRequest
{
    std::span<const Message> messages;
    SamplingParams sampling;
    std::uint64_t seed = 0;
    /// Position of this call within its conversation (0 for the first turn).
    std::size_t turn_index = 0;
    /// Which member of a rollout group, or which attempt of an agent role.
    std::size_t rollout_index = 0;
};

struct TokenUsage
{
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct Generation
{
    std::string text;
    std::optional<TokenUsage> usage;
};

/// Opaque generation service. Implementations must be safe for concurrent
/// calls. Throws TransportError (after the implementation's own retries) or
/// GenerationError.
class ModelEndpoint
{
public:
    virtual ~ModelEndpoint() = default;
    [[nodiscard]] virtual Generation generate(const ChatRequest& request) const = 0;
    [[nodiscard]] virtual std::string describe() const = 0;
};

/// Replays canned turns keyed by (script, rollout_index, turn_index). A script
/// is chosen by the first entry whose `match` substring occurs in the first
/// user message (an entry without `match` matches everything). Holds no
/// mutable state.
///
/// File format (JSON):
///   {"scripts": [{"match": "...", "turns": ["...", {"repeat": "ab", "times": 3}]},
///                {"rollouts": [["turn0", "turn1"], ["turn0'"]]}]}
/// A bare array of turns is shorthand for one unconditional script.
class ScriptedEndpoint final: public ModelEndpoint
{
public:
    struct Script
    {
        std::optional<std::string> match;
        std::vector<std::vector<std::string>> rollouts; ///< indexed by rollout_index % size
    };

    explicit ScriptedEndpoint(std::vector<Script> scripts);
    /// Convenience: one unconditional script, one rollout variant.
    explicit ScriptedEndpoint(std::vector<std::string> turns);

    [[nodiscard]] static ScriptedEndpoint from_json(const nlohmann::json& doc);
    [[nodiscard]] static ScriptedEndpoint from_file(const std::filesystem::path& path);

    [[nodiscard]] Generation generate(const ChatRequest& request) const override;
    [[nodiscard]] std::string describe() const override;

private:
    std::vector<Script> _scripts;
};

struct RemoteChatConfig
{
    std::string base_url; ///< e.g. http://localhost:8000/v1
    std::string model;
    std::string api_key;  ///< resolved token; empty sends no Authorization header
    std::chrono::milliseconds timeout { std::chrono::seconds(120) };
    int max_retries = 3;
    std::chrono::milliseconds backoff { 500 };
};

/// Chat-completions client: POST {base_url}/chat/completions with content
/// parts (text and base64 PNG image_url). Transport failures and 429/5xx are
/// retried with exponential backoff; other failures are GenerationError.
class RemoteChatEndpoint final: public ModelEndpoint
{
public:
    explicit RemoteChatEndpoint(RemoteChatConfig config);

    [[nodiscard]] Generation generate(const ChatRequest& request) const override;
    [[nodiscard]] std::string describe() const override;

    /// Request body for a chat request; exposed for tests and debugging.
    [[nodiscard]] nlohmann::json build_body(const ChatRequest& request) const;

private:
    RemoteChatConfig _config;
    std::string _scheme_host_port;
    std::string _path_prefix;
};

/// Text of the first user message, image segments skipped.
[[nodiscard]] std::string first_user_text(std::span<const Message> messages);

} // namespace visagent
