// SPDX-License-Identifier: Apache-2.0
#include <visagent/tool_protocol.hpp>

#include "text_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <limits>
#include <optional>

namespace visagent
{

namespace
{

enum class TagKind : std::uint8_t
{
    Think,
    ToolCall,
    Answer,
};

constexpr std::size_t kTagKinds = 3;

struct TagSpelling
{
    TagKind kind;
    bool closing;
    std::string_view text;
};

constexpr std::array<TagSpelling, 6> kTags = { {
    { TagKind::Think, false, "<think>" },
    { TagKind::Think, true, "</think>" },
    { TagKind::ToolCall, false, "<tool_call>" },
    { TagKind::ToolCall, true, "</tool_call>" },
    { TagKind::Answer, false, "<answer>" },
    { TagKind::Answer, true, "</answer>" },
} };

struct Tag
{
    TagKind kind;
    bool closing;
    std::size_t begin;
    std::size_t end;
};

struct Block
{
    TagKind kind;
    std::size_t begin;         // position of the opening tag
    std::size_t content_begin; // just past the opening tag
    std::size_t content_end;   // position of the closing tag
    std::size_t end;           // just past the closing tag
    bool nested = false;
};

std::vector<Tag> scan_tags(std::string_view text)
{
    auto tags = std::vector<Tag> {};
    auto pos = text.find('<');
    while (pos != std::string_view::npos)
    {
        auto matched = false;
        for (const auto& spelling: kTags)
        {
            if (text.compare(pos, spelling.text.size(), spelling.text) == 0)
            {
                tags.push_back({ spelling.kind, spelling.closing, pos, pos + spelling.text.size() });
                pos += spelling.text.size();
                matched = true;
                break;
            }
        }
        if (!matched)
            ++pos;
        pos = text.find('<', pos);
    }
    return tags;
}

// Structural depth of a JSON-looking payload, ignoring brackets inside strings.
std::size_t json_depth(std::string_view text)
{
    auto depth = std::size_t { 0 };
    auto max_depth = std::size_t { 0 };
    auto in_string = false;
    auto escaped = false;
    for (char c: text)
    {
        if (in_string)
        {
            if (escaped)
                escaped = false;
            else if (c == '\\')
                escaped = true;
            else if (c == '"')
                in_string = false;
            continue;
        }
        switch (c)
        {
            case '"': in_string = true; break;
            case '{':
            case '[':
                max_depth = std::max(max_depth, ++depth);
                break;
            case '}':
            case ']':
                if (depth > 0)
                    --depth;
                break;
            default: break;
        }
    }
    return max_depth;
}

constexpr std::size_t kMaxToolJsonDepth = 16;

std::optional<std::int64_t> as_int64(const nlohmann::json& value)
{
    if (value.is_number_integer() && !value.is_number_unsigned())
        return value.get<std::int64_t>();
    if (value.is_number_unsigned())
    {
        auto u = value.get<std::uint64_t>();
        if (u <= static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
            return static_cast<std::int64_t>(u);
    }
    return std::nullopt;
}

// Returns either a ToolCall or a diagnostic.
std::variant<ToolCall, std::string> parse_tool_payload(std::string_view payload)
{
    if (json_depth(payload) > kMaxToolJsonDepth)
        return std::string("unparseable tool arguments");

    auto doc = nlohmann::json::parse(payload, nullptr, false);
    if (doc.is_discarded())
        return std::string("unparseable tool arguments");

    if (!doc.is_object() || !doc.contains("name") || !doc["name"].is_string() || !doc.contains("arguments")
        || !doc["arguments"].is_object())
        return std::string("tool call must be an object with 'name' and 'arguments'");

    const auto name = doc["name"].get<std::string>();
    const auto& args = doc["arguments"];

    auto index = std::optional<std::int64_t> {};
    if (args.contains("image_index"))
        index = as_int64(args["image_index"]);
    if (!index || *index < 0)
    {
        if (name != kZoomInName && name != kLookbackName)
            return "unknown tool '" + name + "'";
        return std::string("image_index must be a non-negative integer");
    }

    if (name == kZoomInName)
    {
        if (!args.contains("bbox") || !args["bbox"].is_array() || args["bbox"].size() != 4)
            return std::string("bbox must be 4 integers [x1,y1,x2,y2]");
        auto coords = std::array<std::int64_t, 4> {};
        for (std::size_t i = 0; i < 4; ++i)
        {
            auto v = as_int64(args["bbox"][i]);
            if (!v)
                return std::string("bbox must be 4 integers [x1,y1,x2,y2]");
            coords[i] = *v;
        }
        auto box = BBox { coords[0], coords[1], coords[2], coords[3] };
        if (!(box.x1 < box.x2) || !(box.y1 < box.y2))
            return std::string("bbox requires x1 < x2 and y1 < y2");
        if (!args.contains("label") || !args["label"].is_string())
            return std::string("label must be a non-empty string");
        auto label = std::string(detail::trim(args["label"].get<std::string>()));
        if (label.empty())
            return std::string("label must be a non-empty string");
        return ToolCall { ZoomIn { *index, box, std::move(label) } };
    }

    if (name == kLookbackName)
    {
        if (!args.contains("reason") || !args["reason"].is_string())
            return std::string("reason must be a non-empty string");
        auto reason = std::string(detail::trim(args["reason"].get<std::string>()));
        if (reason.empty())
            return std::string("reason must be a non-empty string");
        return ToolCall { LookbackReuse { *index, std::move(reason) } };
    }

    return "unknown tool '" + name + "'";
}

std::string_view kind_name(TagKind kind)
{
    switch (kind)
    {
        case TagKind::Think: return "think";
        case TagKind::ToolCall: return "tool_call";
        case TagKind::Answer: return "answer";
    }
    return "?";
}

} // namespace

std::string_view tool_name(const ToolCall& call) noexcept
{
    return std::holds_alternative<ZoomIn>(call) ? kZoomInName : kLookbackName;
}

std::int64_t tool_image_index(const ToolCall& call) noexcept
{
    return std::visit([](const auto& c) { return c.image_index; }, call);
}

ViolationClass violation_class(Violation v) noexcept
{
    switch (v)
    {
        case Violation::MissingThink:
        case Violation::UnbalancedThink: return ViolationClass::ThinkTags;
        case Violation::MalformedToolBlock: return ViolationClass::ToolBlock;
        case Violation::NestedTags:
        case Violation::MultipleActions:
        case Violation::StrayText: return ViolationClass::TagOverlap;
        case Violation::MultipleAnswers:
        case Violation::MissingAnswer:
        case Violation::TextAfterAnswer: return ViolationClass::AnswerBlock;
    }
    return ViolationClass::TagOverlap;
}

namespace
{
constexpr std::array<std::string_view, kViolationCount> kViolationNames = {
    "missing_think",  "unbalanced_think", "malformed_tool_block", "nested_tags", "multiple_actions",
    "multiple_answers", "missing_answer", "text_after_answer",    "stray_text",
};
} // namespace

std::string_view to_string(Violation v) noexcept
{
    return kViolationNames[static_cast<std::size_t>(v)];
}

bool parse_violation(std::string_view name, Violation& out) noexcept
{
    for (std::size_t i = 0; i < kViolationNames.size(); ++i)
    {
        if (kViolationNames[i] == name)
        {
            out = static_cast<Violation>(i);
            return true;
        }
    }
    return false;
}

std::bitset<kViolationClassCount> ViolationSet::classes() const noexcept
{
    auto out = std::bitset<kViolationClassCount> {};
    for (std::size_t i = 0; i < kViolationCount; ++i)
        if (_bits.test(i))
            out.set(static_cast<std::size_t>(violation_class(static_cast<Violation>(i))));
    return out;
}

std::vector<Violation> ViolationSet::values() const
{
    auto out = std::vector<Violation> {};
    for (std::size_t i = 0; i < kViolationCount; ++i)
        if (_bits.test(i))
            out.push_back(static_cast<Violation>(i));
    return out;
}

ParsedTurn parse_turn(std::string_view text)
{
    auto turn = ParsedTurn { .thinking = {}, .action = Malformed {}, .raw = std::string(text), .violations = {} };
    const auto tags = scan_tags(text);

    auto last_close = std::array<std::optional<std::size_t>, kTagKinds> {};
    for (const auto& tag: tags)
        if (tag.closing)
            last_close[static_cast<std::size_t>(tag.kind)] = tag.begin;

    auto blocks = std::vector<Block> {};
    // Byte ranges consumed by unmatched tags; everything not inside a block or
    // one of these ranges is free text.
    auto loose_tags = std::vector<std::pair<std::size_t, std::size_t>> {};
    auto unterminated = std::array<bool, kTagKinds> {};
    auto open = std::optional<Block> {};

    for (const auto& tag: tags)
    {
        const auto k = static_cast<std::size_t>(tag.kind);
        if (open)
        {
            if (tag.closing && tag.kind == open->kind)
            {
                open->content_end = tag.begin;
                open->end = tag.end;
                blocks.push_back(*open);
                open.reset();
            }
            else
            {
                open->nested = true;
            }
            continue;
        }

        if (!tag.closing)
        {
            if (last_close[k] && *last_close[k] > tag.begin)
            {
                open = Block { tag.kind, tag.begin, tag.end, tag.end, tag.end, false };
                continue;
            }
            unterminated[k] = true;
            loose_tags.emplace_back(tag.begin, tag.end);
            switch (tag.kind)
            {
                case TagKind::Think: turn.violations.insert(Violation::UnbalancedThink); break;
                case TagKind::ToolCall: turn.violations.insert(Violation::MalformedToolBlock); break;
                case TagKind::Answer: turn.violations.insert(Violation::MissingAnswer); break;
            }
            continue;
        }

        // Closing tag with nothing open.
        loose_tags.emplace_back(tag.begin, tag.end);
        turn.violations.insert(tag.kind == TagKind::Think ? Violation::UnbalancedThink : Violation::StrayText);
    }

    auto thinking = std::vector<std::string_view> {};
    auto tool_blocks = std::vector<const Block*> {};
    auto answer_blocks = std::vector<const Block*> {};
    auto nested_action = std::optional<TagKind> {};
    for (const auto& block: blocks)
    {
        if (block.nested)
        {
            turn.violations.insert(Violation::NestedTags);
            if (block.kind != TagKind::Think && !nested_action)
                nested_action = block.kind;
        }
        const auto content = text.substr(block.content_begin, block.content_end - block.content_begin);
        switch (block.kind)
        {
            case TagKind::Think: thinking.push_back(detail::trim(content)); break;
            case TagKind::ToolCall: tool_blocks.push_back(&block); break;
            case TagKind::Answer: answer_blocks.push_back(&block); break;
        }
    }

    if (thinking.empty() && !turn.violations.contains(Violation::UnbalancedThink))
        turn.violations.insert(Violation::MissingThink);
    for (std::size_t i = 0; i < thinking.size(); ++i)
    {
        if (i > 0)
            turn.thinking += '\n';
        turn.thinking += thinking[i];
    }

    // Free text outside every block and loose tag.
    {
        auto covered = std::vector<std::pair<std::size_t, std::size_t>> {};
        covered.reserve(blocks.size() + loose_tags.size());
        for (const auto& b: blocks)
            covered.emplace_back(b.begin, b.end);
        covered.insert(covered.end(), loose_tags.begin(), loose_tags.end());
        std::sort(covered.begin(), covered.end());

        const auto answer_end =
            answer_blocks.empty() ? std::string_view::npos : answer_blocks.front()->end;
        auto cursor = std::size_t { 0 };
        auto check_gap = [&](std::size_t from, std::size_t to) {
            if (from >= to || detail::trim(text.substr(from, to - from)).empty())
                return;
            if (from >= answer_end)
                turn.violations.insert(Violation::TextAfterAnswer);
            else
                turn.violations.insert(Violation::StrayText);
        };
        for (const auto& [b, e]: covered)
        {
            check_gap(cursor, b);
            cursor = std::max(cursor, e);
        }
        check_gap(cursor, text.size());
    }

    auto malformed = [&](std::string diagnostic, std::optional<Violation> flag) {
        if (flag)
            turn.violations.insert(*flag);
        turn.action = Malformed { std::move(diagnostic) };
        return turn;
    };

    const auto k_tool = static_cast<std::size_t>(TagKind::ToolCall);
    const auto k_answer = static_cast<std::size_t>(TagKind::Answer);
    if (unterminated[k_tool])
        return malformed("unterminated tool_call block", Violation::MalformedToolBlock);
    if (unterminated[k_answer])
        return malformed("unterminated answer block", Violation::MissingAnswer);
    if (!tool_blocks.empty() && !answer_blocks.empty())
        return malformed("tool call and answer in the same turn", Violation::MultipleActions);
    if (tool_blocks.size() > 1)
        return malformed("multiple tool calls", Violation::MultipleActions);
    if (answer_blocks.size() > 1)
        return malformed("multiple answer blocks", Violation::MultipleAnswers);
    if (nested_action)
        return malformed("nested tags inside " + std::string(kind_name(*nested_action)) + " block",
                         Violation::NestedTags);

    if (tool_blocks.size() == 1)
    {
        const auto* b = tool_blocks.front();
        auto parsed = parse_tool_payload(detail::trim(text.substr(b->content_begin, b->content_end - b->content_begin)));
        if (auto* diag = std::get_if<std::string>(&parsed))
            return malformed(std::move(*diag), Violation::MalformedToolBlock);
        turn.action = std::get<ToolCall>(std::move(parsed));
        return turn;
    }

    if (answer_blocks.size() == 1)
    {
        const auto* b = answer_blocks.front();
        auto answer = detail::trim(text.substr(b->content_begin, b->content_end - b->content_begin));
        if (answer.empty())
            return malformed("empty answer block", Violation::MissingAnswer);
        turn.action = FinalAnswer { std::string(answer) };
        return turn;
    }

    return malformed("no tool call or answer", Violation::MissingAnswer);
}

std::string render_tool_call(const ToolCall& call)
{
    auto doc = nlohmann::ordered_json::object();
    doc["name"] = tool_name(call);
    auto args = nlohmann::ordered_json::object();
    std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            args["image_index"] = c.image_index;
            if constexpr (std::is_same_v<T, ZoomIn>)
            {
                args["bbox"] = { c.bbox.x1, c.bbox.y1, c.bbox.x2, c.bbox.y2 };
                args["label"] = c.label;
            }
            else
            {
                args["reason"] = c.reason;
            }
        },
        call);
    doc["arguments"] = std::move(args);
    return doc.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

std::string render_turn(const ParsedTurn& turn)
{
    auto out = "<think>" + turn.thinking + "</think>";
    if (const auto* call = std::get_if<ToolCall>(&turn.action))
        out += "<tool_call>" + render_tool_call(*call) + "</tool_call>";
    else if (const auto* answer = std::get_if<FinalAnswer>(&turn.action))
        out += "<answer>" + answer->text + "</answer>";
    return out;
}

} // namespace visagent
