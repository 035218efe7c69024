// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <visagent/agent_runtime.hpp>

#include <bitset>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace visagent
{

enum class AnswerKind
{
    MultipleChoice, ///< gold is an option letter; leading-letter match
    Exact,          ///< normalized exact match
    Judge,          ///< yes/no rubric against an LLM judge
};

[[nodiscard]] std::string_view to_string(AnswerKind kind) noexcept;
[[nodiscard]] std::optional<AnswerKind> parse_answer_kind(std::string_view name) noexcept;

struct AnswerKey
{
    AnswerKind kind = AnswerKind::Exact;
    std::string gold;
    std::vector<std::string> options; ///< "A. red" style; optional for MultipleChoice
};

inline constexpr double kFormatDeduction = 0.25;

/// 1.0 minus one quantum per violation class present, floored at 0.
[[nodiscard]] double format_score(std::bitset<kViolationClassCount> classes) noexcept;
/// Union of turn violations; a trajectory without a final answer also loses
/// the answer-block quantum.
[[nodiscard]] double format_score(const Trajectory& trajectory) noexcept;

/// r_acc * (a + b * tool_gain) + c * r_format, snapped to 1e-12 so totals
/// equal the decimal value the formula denotes.
[[nodiscard]] double reward_total(int r_acc, int tool_gain, double r_format, const RewardCoefficients& k) noexcept;

/// Option letter an answer commits to: "B", "(b)", "B. blue", "Option B",
/// or the full text of one of `options`.
[[nodiscard]] std::optional<char> leading_option_letter(std::string_view answer,
                                                        std::span<const std::string> options = {});

/// Rule-based check for MultipleChoice and Exact keys. Judge keys fall back to
/// normalized exact match.
[[nodiscard]] bool rule_match(std::string_view answer, const AnswerKey& key);

/// Asks the judge with a fixed yes/no rubric. Ambiguous replies count as 0.
[[nodiscard]] int judge_answer(const ModelEndpoint& judge, std::string_view question, std::string_view answer,
                               std::string_view gold);

/// Throws JudgeUnavailable for a Judge key without a judge endpoint.
[[nodiscard]] RewardBreakdown compute_reward(const Trajectory& trajectory, const AnswerKey& key,
                                             const ModelEndpoint* judge, const RewardCoefficients& coefficients);

/// Priority when several causes co-occur: MaxTurns > MaxLength > NoAnswer.
[[nodiscard]] Validity classify_validity(const Trajectory& trajectory, const RunLimits& limits) noexcept;

struct TrainableSpan
{
    std::size_t segment = 0;
    std::size_t begin = 0;
    std::size_t end = 0;

    bool operator==(const TrainableSpan&) const = default;
};

struct MessageMask
{
    bool trainable = false;
    std::vector<TrainableSpan> spans;
};

/// Trainable exactly on assistant-generated text. With trajectory_masked
/// every flag is false.
[[nodiscard]] std::vector<MessageMask> build_action_mask(const Trajectory& trajectory, bool trajectory_masked = false);

inline constexpr double kAdvantageEpsilon = 1e-6;

struct GroupAdvantages
{
    std::vector<double> advantages;
    double mean = 0.0;
    double std = 0.0;
    std::size_t participants = 0;
    bool degenerate = false; ///< no member participates
};

/// Group-relative advantages over the participating members:
/// A_i = (r_i - mean) / std_pop when std_pop > kAdvantageEpsilon, else 0.
/// Non-participants get 0 and are excluded from mean and std.
[[nodiscard]] GroupAdvantages group_advantages(std::span<const double> rewards, const std::vector<bool>& participate);

} // namespace visagent
