// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bitset>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace visagent
{

/// Axis-aligned box in absolute pixels of the served image, origin top-left.
/// Half-open: covers columns [x1, x2) and rows [y1, y2).
struct BBox
{
    std::int64_t x1 = 0;
    std::int64_t y1 = 0;
    std::int64_t x2 = 0;
    std::int64_t y2 = 0;

    [[nodiscard]] std::int64_t width() const noexcept { return x2 - x1; }
    [[nodiscard]] std::int64_t height() const noexcept { return y2 - y1; }
    [[nodiscard]] std::int64_t area() const noexcept { return width() * height(); }

    bool operator==(const BBox&) const = default;
};

struct ZoomIn
{
    std::int64_t image_index = 0;
    BBox bbox;
    std::string label;

    bool operator==(const ZoomIn&) const = default;
};

struct LookbackReuse
{
    std::int64_t image_index = 0;
    std::string reason;

    bool operator==(const LookbackReuse&) const = default;
};

using ToolCall = std::variant<ZoomIn, LookbackReuse>;

inline constexpr std::string_view kZoomInName = "zoom_in";
inline constexpr std::string_view kLookbackName = "lookback_reuse";

[[nodiscard]] std::string_view tool_name(const ToolCall& call) noexcept;
[[nodiscard]] std::int64_t tool_image_index(const ToolCall& call) noexcept;

struct FinalAnswer
{
    std::string text;
    bool operator==(const FinalAnswer&) const = default;
};

struct Malformed
{
    std::string diagnostic;
    bool operator==(const Malformed&) const = default;
};

using TurnAction = std::variant<ToolCall, FinalAnswer, Malformed>;

/// Format-violation codes recorded while parsing a turn.
enum class Violation : std::uint8_t
{
    MissingThink,
    UnbalancedThink,
    MalformedToolBlock,
    NestedTags,
    MultipleActions,
    MultipleAnswers,
    MissingAnswer,
    TextAfterAnswer,
    StrayText,
};

inline constexpr std::size_t kViolationCount = 9;

/// The four deduction classes of the format score. Each class costs a fixed
/// quantum once, however many of its violations occur.
enum class ViolationClass : std::uint8_t
{
    ThinkTags,
    ToolBlock,
    TagOverlap,
    AnswerBlock,
};

inline constexpr std::size_t kViolationClassCount = 4;

[[nodiscard]] ViolationClass violation_class(Violation v) noexcept;
[[nodiscard]] std::string_view to_string(Violation v) noexcept;
[[nodiscard]] bool parse_violation(std::string_view name, Violation& out) noexcept;

class ViolationSet
{
public:
    ViolationSet() = default;
    ViolationSet(std::initializer_list<Violation> init)
    {
        for (auto v: init)
            insert(v);
    }

    void insert(Violation v) noexcept { _bits.set(static_cast<std::size_t>(v)); }
    [[nodiscard]] bool contains(Violation v) const noexcept { return _bits.test(static_cast<std::size_t>(v)); }
    [[nodiscard]] bool empty() const noexcept { return _bits.none(); }
    [[nodiscard]] std::size_t size() const noexcept { return _bits.count(); }

    ViolationSet& operator|=(const ViolationSet& other) noexcept
    {
        _bits |= other._bits;
        return *this;
    }

    [[nodiscard]] std::bitset<kViolationClassCount> classes() const noexcept;
    [[nodiscard]] std::vector<Violation> values() const;

    bool operator==(const ViolationSet&) const = default;

private:
    std::bitset<kViolationCount> _bits;
};

struct ParsedTurn
{
    std::string thinking;
    TurnAction action;
    std::string raw;
    ViolationSet violations;

    [[nodiscard]] bool is_tool_call() const noexcept { return std::holds_alternative<ToolCall>(action); }
    [[nodiscard]] bool is_answer() const noexcept { return std::holds_alternative<FinalAnswer>(action); }
    [[nodiscard]] bool is_malformed() const noexcept { return std::holds_alternative<Malformed>(action); }
};

/// Parses one raw model turn. Total: never throws, every failure is a
/// Malformed action carrying a diagnostic and violation flags.
[[nodiscard]] ParsedTurn parse_turn(std::string_view text);

/// Canonical rendering of the structured fields (think block + action block).
/// Malformed turns render only their thinking.
[[nodiscard]] std::string render_turn(const ParsedTurn& turn);

/// The `{"name":..., "arguments":{...}}` payload placed inside tool_call tags.
[[nodiscard]] std::string render_tool_call(const ToolCall& call);

} // namespace visagent
