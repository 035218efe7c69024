// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <visagent/endpoint.hpp>
#include <visagent/tool_protocol.hpp>
#include <visagent/visual_tools.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace visagent
{

struct RunLimits
{
    int max_interactions = 5;
    std::int64_t max_input_tokens = 10'480;
    std::int64_t max_response_tokens = 20'480;

    /// Throws std::invalid_argument unless every limit is strictly positive.
    void validate() const;

    bool operator==(const RunLimits&) const = default;
};

enum class Validity
{
    Valid,
    InvalidMaxTurns,
    InvalidMaxLength,
    InvalidNoAnswer,
};

[[nodiscard]] std::string_view to_string(Validity v) noexcept;
[[nodiscard]] std::optional<Validity> parse_validity(std::string_view name) noexcept;

struct RewardCoefficients
{
    double a = 1.0;
    double b = 0.5;
    double c = 0.1;

    bool operator==(const RewardCoefficients&) const = default;
};

struct RewardBreakdown
{
    int r_acc = 0;
    double r_format = 0.0;
    int tool_gain = 0;
    RewardCoefficients coefficients;
    double total = 0.0;
};

enum class ActionKind
{
    ToolCall,
    Answer,
    Malformed,
};

/// Per assistant turn bookkeeping, aligned with the assistant messages.
struct TurnRecord
{
    ActionKind kind = ActionKind::Malformed;
    ViolationSet violations;
    std::int64_t completion_tokens = 0;
    std::string diagnostic;
};

struct ToolEvent
{
    ToolCall call;
    ToolResult result;
    std::string image_ref; ///< empty when the tool returned no image
};

struct ImageInfo
{
    std::string source;
    int original_width = 0;
    int original_height = 0;
    int served_width = 0;
    int served_height = 0;
};

struct Trajectory
{
    std::string prompt_id;
    std::string question;
    std::string image_set_ref;
    std::vector<ImageInfo> images;
    std::vector<Message> messages;
    std::vector<ToolEvent> tool_events;
    std::vector<TurnRecord> turns;
    int turn_count = 0;
    std::int64_t prompt_tokens = 0;     ///< largest context sent in one request
    std::int64_t completion_tokens = 0; ///< sum over assistant turns
    std::optional<std::string> final_answer;
    Validity validity = Validity::InvalidNoAnswer;
    bool context_truncated = false;
    std::optional<RewardBreakdown> reward;

    [[nodiscard]] int tool_call_count() const noexcept;
    [[nodiscard]] int successful_tool_count() const noexcept;
};

/// Fallback token estimate: ceil(bytes/4) per text segment plus
/// ceil(W/28)*ceil(H/28) per image.
[[nodiscard]] std::int64_t count_tokens(std::span<const Segment> segments) noexcept;
/// Server-reported usage wins when present.
[[nodiscard]] std::int64_t count_tokens(std::span<const Segment> segments, std::optional<std::int64_t> reported) noexcept;
[[nodiscard]] std::int64_t count_tokens(std::span<const Message> messages) noexcept;
[[nodiscard]] std::int64_t estimate_text_tokens(std::string_view text) noexcept;
[[nodiscard]] std::int64_t estimate_image_tokens(int width, int height) noexcept;

/// Default system prompt. `{max_interactions}` is substituted at run time.
[[nodiscard]] const std::string& default_system_prompt();

/// Corrective notice appended (non-trainable) after a malformed turn.
[[nodiscard]] std::string corrective_notice(std::string_view diagnostic);

struct EpisodeSpec
{
    std::string prompt_id;
    std::string question;
    std::string image_set_ref;
    std::string system_prompt = default_system_prompt();
    SamplingParams sampling;
    std::uint64_t seed = 0;
};

/// Runs one think-act-iterate episode. Terminates after at most
/// max_interactions tool/malformed rounds plus one final generation.
/// TransportError and GenerationError propagate (the episode is aborted,
/// never labelled InvalidNoAnswer).
[[nodiscard]] Trajectory run_trajectory(const EpisodeSpec& spec, const ImageSet& images,
                                        const ModelEndpoint& endpoint, const RunLimits& limits,
                                        std::size_t rollout_index = 0);

struct RolloutOutcome
{
    std::optional<Trajectory> trajectory;
    std::string error; ///< set when trajectory is empty
    bool transport_failure = false;
};

/// Runs n independent episodes with per-member seeds; order preserved.
/// Throws std::invalid_argument for n < 1 and Error when every member failed.
[[nodiscard]] std::vector<RolloutOutcome> run_group(const EpisodeSpec& spec, const ImageSet& images,
                                                    const ModelEndpoint& endpoint, const RunLimits& limits,
                                                    int n_rollouts, int concurrency = 1);

/// Seed of group member i derived from the episode seed.
[[nodiscard]] std::uint64_t member_seed(std::uint64_t base, std::size_t member) noexcept;

/// Runs fn(i) for i in [0, n) on up to `concurrency` threads. The first
/// exception thrown by fn is rethrown after all workers stop.
void parallel_for(std::size_t n, int concurrency, const std::function<void(std::size_t)>& fn);

} // namespace visagent
