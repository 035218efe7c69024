// SPDX-License-Identifier: Apache-2.0
#include <visagent/tool_protocol.hpp>

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace visagent;
using namespace visagent::testing;

namespace
{

const ZoomIn& zoom_of(const ParsedTurn& t)
{
    return std::get<ZoomIn>(std::get<ToolCall>(t.action));
}

std::string diagnostic_of(const ParsedTurn& t)
{
    return std::get<Malformed>(t.action).diagnostic;
}

} // namespace

TEST(ParseTurn, ZoomCall)
{
    const auto t = parse_turn(zoom_turn(1, 10, 20, 110, 220, "red sign"));
    ASSERT_TRUE(t.is_tool_call());
    EXPECT_TRUE(t.violations.empty());
    EXPECT_EQ(t.thinking, "I need a closer look.");
    const auto& z = zoom_of(t);
    EXPECT_EQ(z.image_index, 1);
    EXPECT_EQ(z.bbox, (BBox { 10, 20, 110, 220 }));
    EXPECT_EQ(z.label, "red sign");
}

TEST(ParseTurn, LookbackCall)
{
    const auto t = parse_turn(lookback_turn(0, "check the left image"));
    ASSERT_TRUE(t.is_tool_call());
    const auto& l = std::get<LookbackReuse>(std::get<ToolCall>(t.action));
    EXPECT_EQ(l.image_index, 0);
    EXPECT_EQ(l.reason, "check the left image");
    EXPECT_EQ(tool_name(std::get<ToolCall>(t.action)), "lookback_reuse");
}

TEST(ParseTurn, Answer)
{
    const auto t = parse_turn("<think>count the cars</think> <answer> 3 </answer>\n");
    ASSERT_TRUE(t.is_answer());
    EXPECT_EQ(std::get<FinalAnswer>(t.action).text, "3");
    EXPECT_TRUE(t.violations.empty());
    EXPECT_EQ(t.raw, "<think>count the cars</think> <answer> 3 </answer>\n");
}

TEST(ParseTurn, MissingThinkIsFlaggedButActionStands)
{
    const auto t = parse_turn("<answer>B</answer>");
    ASSERT_TRUE(t.is_answer());
    EXPECT_TRUE(t.violations.contains(Violation::MissingThink));
    EXPECT_EQ(t.violations.size(), 1u);
}

TEST(ParseTurn, ThinkOnlyIsMalformed)
{
    const auto t = parse_turn("<think>hmm</think>");
    ASSERT_TRUE(t.is_malformed());
    EXPECT_EQ(diagnostic_of(t), "no tool call or answer");
    EXPECT_TRUE(t.violations.contains(Violation::MissingAnswer));
}

TEST(ParseTurn, UnbalancedThink)
{
    const auto t = parse_turn("<think>hmm <answer>A</answer>");
    EXPECT_TRUE(t.violations.contains(Violation::UnbalancedThink));
    EXPECT_FALSE(t.violations.contains(Violation::MissingThink));
}

TEST(ParseTurn, TwoToolCallsAreRejected)
{
    const auto t = parse_turn(zoom_turn(0, 0, 0, 50, 50) + "<tool_call>{}</tool_call>");
    ASSERT_TRUE(t.is_malformed());
    EXPECT_EQ(diagnostic_of(t), "multiple tool calls");
    EXPECT_TRUE(t.violations.contains(Violation::MultipleActions));
}

TEST(ParseTurn, ToolAndAnswerTogether)
{
    const auto t = parse_turn(zoom_turn(0, 0, 0, 50, 50) + "<answer>A</answer>");
    ASSERT_TRUE(t.is_malformed());
    EXPECT_EQ(diagnostic_of(t), "tool call and answer in the same turn");
}

TEST(ParseTurn, MultipleAnswers)
{
    const auto t = parse_turn("<think>x</think><answer>A</answer><answer>B</answer>");
    ASSERT_TRUE(t.is_malformed());
    EXPECT_TRUE(t.violations.contains(Violation::MultipleAnswers));
}

TEST(ParseTurn, NestedAnswerInsideThink)
{
    const auto t = parse_turn("<think>maybe <answer>A</answer></think><answer>B</answer>");
    EXPECT_TRUE(t.violations.contains(Violation::NestedTags));
}

TEST(ParseTurn, TextAfterAnswerAndStrayText)
{
    const auto after = parse_turn("<think>x</think><answer>A</answer> trailing words");
    ASSERT_TRUE(after.is_answer());
    EXPECT_TRUE(after.violations.contains(Violation::TextAfterAnswer));

    const auto stray = parse_turn("preamble <think>x</think><answer>A</answer>");
    ASSERT_TRUE(stray.is_answer());
    EXPECT_TRUE(stray.violations.contains(Violation::StrayText));
}

TEST(ParseTurn, BadToolPayloads)
{
    const auto cases = std::vector<std::pair<std::string, std::string>> {
        { "not json", "unparseable tool arguments" },
        { R"({"name":"zoom_in"})", "tool call must be an object with 'name' and 'arguments'" },
        { R"({"name":"crop","arguments":{"image_index":0}})", "unknown tool 'crop'" },
        { R"({"name":"zoom_in","arguments":{"image_index":-1,"bbox":[0,0,1,1],"label":"a"}})",
          "image_index must be a non-negative integer" },
        { R"({"name":"zoom_in","arguments":{"image_index":0,"bbox":[0,0,1],"label":"a"}})",
          "bbox must be 4 integers [x1,y1,x2,y2]" },
        { R"({"name":"zoom_in","arguments":{"image_index":0,"bbox":[0,0,1.5,2],"label":"a"}})",
          "bbox must be 4 integers [x1,y1,x2,y2]" },
        { R"({"name":"zoom_in","arguments":{"image_index":0,"bbox":[5,0,5,2],"label":"a"}})",
          "bbox requires x1 < x2 and y1 < y2" },
        { R"({"name":"zoom_in","arguments":{"image_index":0,"bbox":[0,0,5,2],"label":"  "}})",
          "label must be a non-empty string" },
        { R"({"name":"lookback_reuse","arguments":{"image_index":0}})", "reason must be a non-empty string" },
    };
    for (const auto& [payload, diagnostic]: cases)
    {
        const auto t = parse_turn("<think>t</think><tool_call>" + payload + "</tool_call>");
        ASSERT_TRUE(t.is_malformed()) << payload;
        EXPECT_EQ(diagnostic_of(t), diagnostic) << payload;
        EXPECT_TRUE(t.violations.contains(Violation::MalformedToolBlock)) << payload;
    }
}

TEST(ParseTurn, DeeplyNestedPayloadIsRejectedWithoutRecursing)
{
    const auto payload = std::string(100'000, '[') + std::string(100'000, ']');
    const auto t = parse_turn("<think>t</think><tool_call>" + payload + "</tool_call>");
    ASSERT_TRUE(t.is_malformed());
    EXPECT_EQ(diagnostic_of(t), "unparseable tool arguments");
}

TEST(ParseTurn, UnterminatedBlocks)
{
    EXPECT_EQ(diagnostic_of(parse_turn("<think>x</think><tool_call>{")), "unterminated tool_call block");
    EXPECT_EQ(diagnostic_of(parse_turn("<think>x</think><answer>A")), "unterminated answer block");
}

TEST(ViolationClasses, FourClasses)
{
    EXPECT_EQ(violation_class(Violation::MissingThink), ViolationClass::ThinkTags);
    EXPECT_EQ(violation_class(Violation::UnbalancedThink), ViolationClass::ThinkTags);
    EXPECT_EQ(violation_class(Violation::MalformedToolBlock), ViolationClass::ToolBlock);
    EXPECT_EQ(violation_class(Violation::NestedTags), ViolationClass::TagOverlap);
    EXPECT_EQ(violation_class(Violation::MultipleActions), ViolationClass::TagOverlap);
    EXPECT_EQ(violation_class(Violation::StrayText), ViolationClass::TagOverlap);
    EXPECT_EQ(violation_class(Violation::MultipleAnswers), ViolationClass::AnswerBlock);
    EXPECT_EQ(violation_class(Violation::MissingAnswer), ViolationClass::AnswerBlock);
    EXPECT_EQ(violation_class(Violation::TextAfterAnswer), ViolationClass::AnswerBlock);

    const auto set = ViolationSet { Violation::MissingThink, Violation::UnbalancedThink, Violation::StrayText };
    EXPECT_EQ(set.classes().count(), 2u);
}

TEST(ViolationNames, RoundTrip)
{
    for (std::size_t i = 0; i < kViolationCount; ++i)
    {
        const auto v = static_cast<Violation>(i);
        auto back = Violation::MissingThink;
        ASSERT_TRUE(parse_violation(to_string(v), back));
        EXPECT_EQ(back, v);
    }
    auto ignored = Violation::MissingThink;
    EXPECT_FALSE(parse_violation("bogus", ignored));
}

// Property: rendering a structured turn and parsing it back yields the same
// action with no violations.
TEST(ParseTurnProperty, RenderParseRoundTrip)
{
    auto rng = std::mt19937_64(7);
    auto coord = std::uniform_int_distribution<std::int64_t>(0, 5000);
    auto words = std::vector<std::string> { "red", "sign", "left", "tower", "a \"quoted\" word", "ünïcode", "x<y" };
    auto pick = [&] { return words[rng() % words.size()]; };
    for (int i = 0; i < 2000; ++i)
    {
        auto original = ParsedTurn {};
        original.thinking = pick() + " " + pick();
        switch (rng() % 3)
        {
            case 0:
            {
                auto x1 = coord(rng);
                auto y1 = coord(rng);
                original.action =
                    ToolCall { ZoomIn { static_cast<std::int64_t>(rng() % 4),
                                        BBox { x1, y1, x1 + 1 + coord(rng), y1 + 1 + coord(rng) }, pick() } };
                break;
            }
            case 1:
                original.action = ToolCall { LookbackReuse { static_cast<std::int64_t>(rng() % 4), pick() } };
                break;
            default: original.action = FinalAnswer { pick() }; break;
        }
        if (original.thinking.find('<') != std::string::npos)
            original.thinking = "plain";
        if (const auto* a = std::get_if<FinalAnswer>(&original.action); a && a->text.find('<') != std::string::npos)
            original.action = FinalAnswer { "plain" };

        const auto parsed = parse_turn(render_turn(original));
        ASSERT_TRUE(parsed.violations.empty()) << render_turn(original);
        EXPECT_EQ(parsed.thinking, original.thinking);
        EXPECT_EQ(parsed.action, original.action) << render_turn(original);
    }
}

// Property: the parser is total. Every input yields exactly one action kind.
TEST(ParseTurnProperty, TotalOnRandomBytes)
{
    auto rng = std::mt19937_64(11);
    const auto alphabet = std::string("<>/{}[]\":,thinkoolcalansewr_ 0123456789\n\xff\xc3");
    for (int i = 0; i < 5000; ++i)
    {
        auto text = std::string {};
        const auto n = rng() % 200;
        for (std::size_t k = 0; k < n; ++k)
            text += alphabet[rng() % alphabet.size()];
        auto parsed = ParsedTurn {};
        ASSERT_NO_THROW(parsed = parse_turn(text));
        const auto kinds = int(parsed.is_tool_call()) + int(parsed.is_answer()) + int(parsed.is_malformed());
        EXPECT_EQ(kinds, 1);
        EXPECT_EQ(parsed.raw, text);
    }
}
