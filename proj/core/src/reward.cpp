// SPDX-License-Identifier: Apache-2.0
#include <visagent/reward.hpp>

#include <visagent/errors.hpp>

#include "text_util.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace visagent
{

std::string_view to_string(AnswerKind kind) noexcept
{
    switch (kind)
    {
        case AnswerKind::MultipleChoice: return "choice";
        case AnswerKind::Exact: return "exact";
        case AnswerKind::Judge: return "judge";
    }
    return "exact";
}

std::optional<AnswerKind> parse_answer_kind(std::string_view name) noexcept
{
    for (auto k: { AnswerKind::MultipleChoice, AnswerKind::Exact, AnswerKind::Judge })
        if (to_string(k) == name)
            return k;
    return std::nullopt;
}

double format_score(std::bitset<kViolationClassCount> classes) noexcept
{
    const auto score = 1.0 - kFormatDeduction * static_cast<double>(classes.count());
    return score < 0.0 ? 0.0 : score;
}

double format_score(const Trajectory& trajectory) noexcept
{
    auto classes = std::bitset<kViolationClassCount> {};
    for (const auto& turn: trajectory.turns)
        classes |= turn.violations.classes();
    if (!trajectory.final_answer)
        classes.set(static_cast<std::size_t>(ViolationClass::AnswerBlock));
    return format_score(classes);
}

double reward_total(int r_acc, int tool_gain, double r_format, const RewardCoefficients& k) noexcept
{
    const auto exact = static_cast<long double>(r_acc) *
                           (static_cast<long double>(k.a) + static_cast<long double>(k.b) * tool_gain) +
                       static_cast<long double>(k.c) * static_cast<long double>(r_format);
    if (!std::isfinite(exact) || std::fabs(exact) > 1e6L)
        return static_cast<double>(exact);
    return static_cast<double>(std::llround(exact * 1e12L)) / 1e12;
}

namespace
{

std::string option_body(std::string_view option)
{
    // "A. red" -> "red"; options without a letter prefix are returned whole.
    auto s = detail::trim(option);
    if (s.size() >= 2 && std::isalpha(static_cast<unsigned char>(s[0])) &&
        (s[1] == '.' || s[1] == ')' || s[1] == ':'))
        s.remove_prefix(2);
    else if (s.size() >= 3 && s[0] == '(' && std::isalpha(static_cast<unsigned char>(s[1])) && s[2] == ')')
        s.remove_prefix(3);
    return detail::normalize_text(s);
}

char option_letter(std::size_t index)
{
    return static_cast<char>('A' + index);
}

} // namespace

std::optional<char> leading_option_letter(std::string_view answer, std::span<const std::string> options)
{
    auto s = detail::trim(answer);
    if (s.empty())
        return std::nullopt;

    const auto normalized = detail::normalize_text(s);
    for (std::size_t i = 0; i < options.size() && i < 26; ++i)
        if (!normalized.empty() &&
            (normalized == option_body(options[i]) || normalized == detail::normalize_text(options[i])))
            return option_letter(i);

    auto lower = std::string(s.substr(0, 7));
    for (auto& c: lower)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower.starts_with("option") && s.size() > 6 && (detail::is_space(s[6]) || s[6] == ':'))
    {
        s.remove_prefix(7);
        s = detail::trim(s);
    }

    auto bracketed = false;
    if (!s.empty() && s.front() == '(')
    {
        s.remove_prefix(1);
        bracketed = true;
    }
    if (s.empty() || !std::isalpha(static_cast<unsigned char>(s.front())))
        return std::nullopt;
    const auto letter = static_cast<char>(std::toupper(static_cast<unsigned char>(s.front())));
    s.remove_prefix(1);
    if (bracketed)
    {
        if (s.empty() || s.front() != ')')
            return std::nullopt;
        s.remove_prefix(1);
    }
    else if (!s.empty() && !(s.front() == '.' || s.front() == ')' || s.front() == ':' || s.front() == ',' ||
                             detail::is_space(s.front())))
        return std::nullopt;

    if (!options.empty() && static_cast<std::size_t>(letter - 'A') >= options.size())
        return std::nullopt;
    return letter;
}

bool rule_match(std::string_view answer, const AnswerKey& key)
{
    if (key.kind == AnswerKind::MultipleChoice)
    {
        const auto gold = leading_option_letter(key.gold, key.options);
        const auto got = leading_option_letter(answer, key.options);
        return gold && got && *gold == *got;
    }
    const auto expected = detail::normalize_text(key.gold);
    return !expected.empty() && detail::normalize_text(answer) == expected;
}

int judge_answer(const ModelEndpoint& judge, std::string_view question, std::string_view answer,
                 std::string_view gold)
{
    auto messages = std::vector<Message> {};
    messages.push_back({ Role::System,
                         { Segment::make_text("You grade answers to visual questions. Compare the candidate answer "
                                              "with the reference answer. Minor wording or formatting differences "
                                              "are fine; a different value, entity or choice is wrong. Reply with "
                                              "exactly one word: yes or no.") },
                         false });
    messages.push_back(
        { Role::User,
          { Segment::make_text(fmt::format("Question: {}\nReference answer: {}\nCandidate answer: {}\nIs the "
                                           "candidate answer correct?",
                                           question, gold, answer)) },
          false });

    const auto request = ChatRequest { messages, SamplingParams { 0.0, 16 }, 0, 0, 0 };
    const auto reply = detail::normalize_text(judge.generate(request).text);
    if (reply == "yes")
        return 1;
    if (reply == "no")
        return 0;
    spdlog::warn("judge reply '{}' is neither yes nor no; scoring as incorrect", reply.substr(0, 80));
    return 0;
}

RewardBreakdown compute_reward(const Trajectory& trajectory, const AnswerKey& key, const ModelEndpoint* judge,
                               const RewardCoefficients& coefficients)
{
    if (key.kind == AnswerKind::Judge && judge == nullptr)
        throw JudgeUnavailable(fmt::format("prompt '{}' needs a judge endpoint but none is configured",
                                           trajectory.prompt_id));

    auto out = RewardBreakdown {};
    out.coefficients = coefficients;
    if (trajectory.final_answer)
    {
        if (key.kind == AnswerKind::Judge)
            out.r_acc = judge_answer(*judge, trajectory.question, *trajectory.final_answer, key.gold);
        else
            out.r_acc = rule_match(*trajectory.final_answer, key) ? 1 : 0;
    }
    out.tool_gain = trajectory.successful_tool_count() > 0 ? 1 : 0;
    out.r_format = format_score(trajectory);
    out.total = reward_total(out.r_acc, out.tool_gain, out.r_format, coefficients);
    return out;
}

Validity classify_validity(const Trajectory& trajectory, const RunLimits& limits) noexcept
{
    const auto rounds = std::count_if(trajectory.turns.begin(), trajectory.turns.end(),
                                      [](const TurnRecord& t) { return t.kind != ActionKind::Answer; });
    if (rounds > limits.max_interactions)
        return Validity::InvalidMaxTurns;
    if (trajectory.completion_tokens > limits.max_response_tokens)
        return Validity::InvalidMaxLength;
    if (!trajectory.final_answer)
        return Validity::InvalidNoAnswer;
    return Validity::Valid;
}

std::vector<MessageMask> build_action_mask(const Trajectory& trajectory, bool trajectory_masked)
{
    auto out = std::vector<MessageMask> {};
    out.reserve(trajectory.messages.size());
    for (const auto& message: trajectory.messages)
    {
        auto mask = MessageMask {};
        mask.trainable = !trajectory_masked && message.role == Role::Assistant;
        if (mask.trainable)
            for (std::size_t i = 0; i < message.segments.size(); ++i)
            {
                const auto& segment = message.segments[i];
                if (segment.is_text() && !segment.text.empty())
                    mask.spans.push_back({ i, 0, segment.text.size() });
            }
        out.push_back(std::move(mask));
    }
    return out;
}

GroupAdvantages group_advantages(std::span<const double> rewards, const std::vector<bool>& participate)
{
    if (rewards.empty())
        throw std::invalid_argument("group_advantages needs at least one member");
    if (participate.size() != rewards.size())
        throw std::invalid_argument("reward and mask sizes differ");

    auto out = GroupAdvantages {};
    out.advantages.assign(rewards.size(), 0.0);
    auto sum = 0.0L;
    for (std::size_t i = 0; i < rewards.size(); ++i)
        if (participate[i])
        {
            sum += rewards[i];
            ++out.participants;
        }
    if (out.participants == 0)
    {
        out.degenerate = true;
        return out;
    }

    const auto mean = sum / static_cast<long double>(out.participants);
    auto squares = 0.0L;
    for (std::size_t i = 0; i < rewards.size(); ++i)
        if (participate[i])
            squares += (rewards[i] - mean) * (rewards[i] - mean);
    const auto std_pop = std::sqrt(squares / static_cast<long double>(out.participants));
    out.mean = static_cast<double>(mean);
    out.std = static_cast<double>(std_pop);

    if (std_pop > kAdvantageEpsilon)
        for (std::size_t i = 0; i < rewards.size(); ++i)
            if (participate[i])
                out.advantages[i] = static_cast<double>((rewards[i] - mean) / std_pop);
    return out;
}

} // namespace visagent
