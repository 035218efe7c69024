// SPDX-License-Identifier: Apache-2.0
#include <visagent/agent_runtime.hpp>

#include <visagent/errors.hpp>
#include <visagent/reward.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace visagent
{

void RunLimits::validate() const
{
    if (max_interactions <= 0 || max_input_tokens <= 0 || max_response_tokens <= 0)
        throw std::invalid_argument("run limits must be strictly positive");
}

std::string_view to_string(Validity v) noexcept
{
    switch (v)
    {
        case Validity::Valid: return "valid";
        case Validity::InvalidMaxTurns: return "invalid_max_turns";
        case Validity::InvalidMaxLength: return "invalid_max_length";
        case Validity::InvalidNoAnswer: return "invalid_no_answer";
    }
    return "invalid_no_answer";
}

std::optional<Validity> parse_validity(std::string_view name) noexcept
{
    for (auto v: { Validity::Valid, Validity::InvalidMaxTurns, Validity::InvalidMaxLength, Validity::InvalidNoAnswer })
        if (to_string(v) == name)
            return v;
    return std::nullopt;
}

int Trajectory::tool_call_count() const noexcept
{
    return static_cast<int>(tool_events.size());
}

int Trajectory::successful_tool_count() const noexcept
{
    auto n = 0;
    for (const auto& e: tool_events)
        n += e.result.ok() ? 1 : 0;
    return n;
}

std::int64_t estimate_text_tokens(std::string_view text) noexcept
{
    return static_cast<std::int64_t>((text.size() + 3) / 4);
}

std::int64_t estimate_image_tokens(int width, int height) noexcept
{
    const auto cols = (static_cast<std::int64_t>(width) + kPatchSide - 1) / kPatchSide;
    const auto rows = (static_cast<std::int64_t>(height) + kPatchSide - 1) / kPatchSide;
    return cols * rows;
}

std::int64_t count_tokens(std::span<const Segment> segments) noexcept
{
    auto total = std::int64_t { 0 };
    for (const auto& s: segments)
        total += s.is_text() ? estimate_text_tokens(s.text) : estimate_image_tokens(s.width, s.height);
    return total;
}

std::int64_t count_tokens(std::span<const Segment> segments, std::optional<std::int64_t> reported) noexcept
{
    return reported ? *reported : count_tokens(segments);
}

std::int64_t count_tokens(std::span<const Message> messages) noexcept
{
    auto total = std::int64_t { 0 };
    for (const auto& m: messages)
        total += count_tokens(m.segments);
    return total;
}

const std::string& default_system_prompt()
{
    static const auto prompt = std::string(
        R"(You are a visual reasoning agent. You receive one or more images, indexed from 0 in the order shown, and a question about them.

In every turn, first reason inside <think>...</think>. Then do exactly one of:
1. Call one tool inside <tool_call>...</tool_call> as a JSON object {"name": ..., "arguments": {...}}.
2. Give the final answer inside <answer>...</answer>.

Tools:
- zoom_in: crop a region of one image to inspect it closely. Arguments: "image_index" (0-based integer), "bbox" ([x1, y1, x2, y2] in absolute pixels of that image as shown, origin top-left), "label" (short name of the region of interest).
- lookback_reuse: view one input image again in full. Arguments: "image_index" (0-based integer), "reason" (why you need to look at it again).

You may use tools at most {max_interactions} times. Tool results arrive in the next message.

Example:
<think>The clock in image 0 is too small to read.</think><tool_call>{"name": "zoom_in", "arguments": {"image_index": 0, "bbox": [100, 50, 400, 300], "label": "wall clock"}}</tool_call>)");
    return prompt;
}

std::string corrective_notice(std::string_view diagnostic)
{
    return fmt::format(
        "Your previous response could not be used ({}). Reason inside <think></think>, then either call exactly one "
        "tool inside <tool_call></tool_call> or give the final answer inside <answer></answer>.",
        diagnostic);
}

namespace
{

std::string substitute_limits(std::string prompt, int max_interactions)
{
    static constexpr auto placeholder = std::string_view("{max_interactions}");
    for (auto pos = prompt.find(placeholder); pos != std::string::npos; pos = prompt.find(placeholder, pos))
    {
        const auto value = std::to_string(max_interactions);
        prompt.replace(pos, placeholder.size(), value);
        pos += value.size();
    }
    return prompt;
}

void assert_pixel_budget(const std::vector<Message>& messages, const ImageSet& images)
{
    auto input_total = std::int64_t { 0 };
    for (const auto& m: messages)
    {
        for (const auto& s: m.segments)
        {
            if (!s.is_image())
                continue;
            const auto pixels = static_cast<std::int64_t>(s.width) * s.height;
            if (pixels > images.total_pixel_budget() || pixels > images.per_image_max_pixels())
                throw std::logic_error(fmt::format("image {} ({} px) exceeds the pixel budget", s.image_ref, pixels));
            if (m.role == Role::User && s.image_ref.starts_with("input:"))
                input_total += pixels;
        }
    }
    if (input_total > images.total_pixel_budget())
        throw std::logic_error(fmt::format("input images ({} px) exceed the pixel budget", input_total));
}

} // namespace

Trajectory run_trajectory(const EpisodeSpec& spec, const ImageSet& images, const ModelEndpoint& endpoint,
                          const RunLimits& limits, std::size_t rollout_index)
{
    limits.validate();

    auto t = Trajectory {};
    t.prompt_id = spec.prompt_id;
    t.question = spec.question;
    t.image_set_ref = spec.image_set_ref;
    for (const auto& image: images.images())
        t.images.push_back({ image.source, image.original_width, image.original_height, image.width(), image.height() });

    t.messages.push_back(
        { Role::System, { Segment::make_text(substitute_limits(spec.system_prompt, limits.max_interactions)) }, false });
    auto user = Message { Role::User, {}, false };
    for (std::size_t i = 0; i < images.size(); ++i)
    {
        const auto& image = images.at(i);
        user.segments.push_back(Segment::make_text(fmt::format("Image {} ({}x{}):", i, image.width(), image.height())));
        user.segments.push_back(Segment::make_image(fmt::format("input:{}", i), image.served));
    }
    user.segments.push_back(Segment::make_text(spec.question));
    t.messages.push_back(std::move(user));

    auto interactions = 0;
    for (;;)
    {
        assert_pixel_budget(t.messages, images);
        const auto context = count_tokens(std::span<const Message>(t.messages));
        if (context > limits.max_input_tokens)
        {
            spdlog::debug("{}: context of {} tokens exceeds the input limit; stopping", spec.prompt_id, context);
            t.context_truncated = true;
            break;
        }

        const auto request = ChatRequest { t.messages, spec.sampling, spec.seed,
                                           static_cast<std::size_t>(t.turn_count), rollout_index };
        auto generation = endpoint.generate(request);

        t.prompt_tokens = std::max(t.prompt_tokens, generation.usage ? generation.usage->prompt_tokens : context);
        const auto completion =
            generation.usage ? generation.usage->completion_tokens : estimate_text_tokens(generation.text);
        t.completion_tokens += completion;

        auto parsed = parse_turn(generation.text);
        auto record = TurnRecord {};
        record.violations = parsed.violations;
        record.completion_tokens = completion;
        if (parsed.is_tool_call())
            record.kind = ActionKind::ToolCall;
        else if (parsed.is_answer())
            record.kind = ActionKind::Answer;
        else
            record.diagnostic = std::get<Malformed>(parsed.action).diagnostic;
        t.turns.push_back(record);
        t.messages.push_back({ Role::Assistant, { Segment::make_text(std::move(generation.text)) }, true });
        ++t.turn_count;

        if (t.completion_tokens > limits.max_response_tokens)
            break;
        if (auto* answer = std::get_if<FinalAnswer>(&parsed.action))
        {
            t.final_answer = answer->text;
            break;
        }
        if (interactions == limits.max_interactions)
            break;
        ++interactions;

        if (auto* call = std::get_if<ToolCall>(&parsed.action))
        {
            auto result = execute_tool(images, *call);
            auto rendered = serialize_tool_result(result);
            auto message = Message { Role::Tool, { Segment::make_text(std::move(rendered.text)) }, false };
            auto event = ToolEvent { *call, std::move(result), {} };
            if (rendered.image)
            {
                event.image_ref = fmt::format("tool:{}", t.tool_events.size());
                message.segments.push_back(Segment::make_image(event.image_ref, std::move(*rendered.image)));
            }
            t.tool_events.push_back(std::move(event));
            t.messages.push_back(std::move(message));
        }
        else
        {
            t.messages.push_back({ Role::Tool, { Segment::make_text(corrective_notice(record.diagnostic)) }, false });
        }
    }

    t.validity = classify_validity(t, limits);
    return t;
}

std::uint64_t member_seed(std::uint64_t base, std::size_t member) noexcept
{
    return base + member;
}

void parallel_for(std::size_t n, int concurrency, const std::function<void(std::size_t)>& fn)
{
    if (concurrency <= 1 || n <= 1)
    {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }

    auto next = std::atomic<std::size_t> { 0 };
    auto first_error = std::exception_ptr {};
    auto error_mutex = std::mutex {};
    auto worker = [&] {
        for (auto i = next.fetch_add(1); i < n; i = next.fetch_add(1))
        {
            try
            {
                fn(i);
            }
            catch (...)
            {
                auto lock = std::lock_guard(error_mutex);
                if (!first_error)
                    first_error = std::current_exception();
            }
        }
    };
    auto threads = std::vector<std::thread> {};
    const auto count = std::min<std::size_t>(n, static_cast<std::size_t>(concurrency));
    threads.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        threads.emplace_back(worker);
    for (auto& t: threads)
        t.join();
    if (first_error)
        std::rethrow_exception(first_error);
}

std::vector<RolloutOutcome> run_group(const EpisodeSpec& spec, const ImageSet& images, const ModelEndpoint& endpoint,
                                      const RunLimits& limits, int n_rollouts, int concurrency)
{
    if (n_rollouts < 1)
        throw std::invalid_argument("a rollout group needs at least one member");

    auto outcomes = std::vector<RolloutOutcome>(static_cast<std::size_t>(n_rollouts));
    parallel_for(outcomes.size(), concurrency, [&](std::size_t i) {
        auto member = spec;
        member.seed = member_seed(spec.seed, i);
        try
        {
            outcomes[i].trajectory = run_trajectory(member, images, endpoint, limits, i);
        }
        catch (const TransportError& e)
        {
            outcomes[i].error = e.what();
            outcomes[i].transport_failure = true;
        }
        catch (const Error& e)
        {
            outcomes[i].error = e.what();
        }
    });

    const auto failures = std::count_if(outcomes.begin(), outcomes.end(),
                                        [](const RolloutOutcome& o) { return !o.trajectory.has_value(); });
    if (failures == n_rollouts)
        throw Error(fmt::format("all {} rollouts of '{}' failed; first error: {}", n_rollouts, spec.prompt_id,
                                outcomes.front().error));
    return outcomes;
}

} // namespace visagent
