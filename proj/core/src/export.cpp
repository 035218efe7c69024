// SPDX-License-Identifier: Apache-2.0
#include <visagent/export.hpp>

#include <visagent/errors.hpp>

#include "text_util.hpp"

#include <fmt/format.h>

#include <chrono>
#include <ctime>
#include <initializer_list>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace visagent
{

using nlohmann::json;

MaskedGroup make_masked_group(std::string prompt_id, std::uint64_t group_id, std::vector<Trajectory> trajectories)
{
    if (trajectories.empty())
        throw std::invalid_argument("cannot build a group without trajectories");

    auto group = MaskedGroup {};
    group.prompt_id = std::move(prompt_id);
    group.group_id = group_id;
    group.trajectories = std::move(trajectories);

    auto rewards = std::vector<double> {};
    for (const auto& t: group.trajectories)
    {
        if (!t.reward)
            throw std::invalid_argument(fmt::format("trajectory of '{}' has no reward", t.prompt_id));
        rewards.push_back(t.reward->total);
        group.trajectory_mask.push_back(t.validity == Validity::Valid);
    }
    auto stats = group_advantages(rewards, group.trajectory_mask);
    group.advantages = std::move(stats.advantages);
    group.mean = stats.mean;
    group.std = stats.std;
    group.degenerate = stats.degenerate;
    return group;
}

json tool_call_to_json(const ToolCall& call)
{
    auto arguments = json::object();
    if (const auto* zoom = std::get_if<ZoomIn>(&call))
    {
        arguments["image_index"] = zoom->image_index;
        arguments["bbox"] = { zoom->bbox.x1, zoom->bbox.y1, zoom->bbox.x2, zoom->bbox.y2 };
        arguments["label"] = detail::sanitize_utf8(zoom->label);
    }
    else
    {
        const auto& back = std::get<LookbackReuse>(call);
        arguments["image_index"] = back.image_index;
        arguments["reason"] = detail::sanitize_utf8(back.reason);
    }
    return arguments;
}

json reward_to_json(const RewardBreakdown& reward)
{
    return { { "r_acc", reward.r_acc },
             { "tool_gain", reward.tool_gain },
             { "r_format", reward.r_format },
             { "a", reward.coefficients.a },
             { "b", reward.coefficients.b },
             { "c", reward.coefficients.c },
             { "total", reward.total } };
}

json export_record(const MaskedGroup& group, std::size_t member, const std::string& created_at)
{
    const auto& t = group.trajectories.at(member);
    const auto masked = !group.trajectory_mask.at(member);

    auto images = json::array();
    for (std::size_t i = 0; i < t.images.size(); ++i)
    {
        const auto& image = t.images[i];
        images.push_back({ { "index", i },
                           { "path", detail::sanitize_utf8(image.source) },
                           { "original_width", image.original_width },
                           { "original_height", image.original_height },
                           { "served_width", image.served_width },
                           { "served_height", image.served_height } });
    }

    // Spans are computed on the sanitized text so they index the exported bytes.
    auto messages = json::array();
    for (const auto& message: t.messages)
    {
        const auto trainable = !masked && message.role == Role::Assistant;
        auto segments = json::array();
        auto spans = json::array();
        for (std::size_t i = 0; i < message.segments.size(); ++i)
        {
            const auto& segment = message.segments[i];
            if (segment.is_text())
            {
                auto text = detail::sanitize_utf8(segment.text);
                if (trainable && !text.empty())
                    spans.push_back({ i, 0, text.size() });
                segments.push_back({ { "type", "text" }, { "text", std::move(text) } });
            }
            else
                segments.push_back({ { "type", "image" },
                                     { "ref", segment.image_ref },
                                     { "width", segment.width },
                                     { "height", segment.height } });
        }
        messages.push_back({ { "role", to_string(message.role) },
                             { "segments", std::move(segments) },
                             { "trainable", trainable },
                             { "trainable_spans", std::move(spans) } });
    }

    auto events = json::array();
    for (const auto& event: t.tool_events)
    {
        auto region = json();
        if (event.result.region)
        {
            const auto& r = *event.result.region;
            region = { r.x1, r.y1, r.x2, r.y2 };
        }
        events.push_back({ { "name", tool_name(event.call) },
                           { "arguments", tool_call_to_json(event.call) },
                           { "status", event.result.ok() ? "ok" : "error" },
                           { "message", detail::sanitize_utf8(event.result.message) },
                           { "image_ref", event.image_ref },
                           { "image_pixels", event.result.image_pixels },
                           { "region", std::move(region) } });
    }

    auto record = json::object();
    record["schema_version"] = kExportSchemaVersion;
    record["prompt_id"] = detail::sanitize_utf8(group.prompt_id);
    record["group_id"] = group.group_id;
    record["member_id"] = member;
    record["question"] = detail::sanitize_utf8(t.question);
    record["image_manifest"] = std::move(images);
    record["messages"] = std::move(messages);
    record["tool_events"] = std::move(events);
    record["reward"] = reward_to_json(t.reward.value());
    record["advantage"] = masked ? 0.0 : group.advantages.at(member);
    record["validity"] = to_string(t.validity);
    record["trajectory_masked"] = masked;
    record["final_answer"] = t.final_answer ? json(detail::sanitize_utf8(*t.final_answer)) : json();
    record["turn_count"] = t.turn_count;
    record["prompt_tokens"] = t.prompt_tokens;
    record["completion_tokens"] = t.completion_tokens;
    record["context_truncated"] = t.context_truncated;
    record["created_at"] = created_at;
    return record;
}

namespace
{

[[noreturn]] void fail(const std::string& path, std::string_view what)
{
    throw SchemaError(fmt::format("{}: {}", path, what));
}

const json& require_object(const json& value, const std::string& path,
                           std::initializer_list<std::string_view> keys)
{
    if (!value.is_object())
        fail(path, "expected an object");
    for (auto key: keys)
        if (!value.contains(key))
            fail(path, fmt::format("missing field '{}'", key));
    for (const auto& [key, _]: value.items())
    {
        auto known = false;
        for (auto k: keys)
            known = known || k == key;
        if (!known)
            fail(path, fmt::format("unknown field '{}'", key));
    }
    return value;
}

void require_string(const json& v, const std::string& path)
{
    if (!v.is_string())
        fail(path, "expected a string");
}

std::int64_t require_integer(const json& v, const std::string& path, std::int64_t min = 0)
{
    if (!v.is_number_integer())
        fail(path, "expected an integer");
    const auto n = v.get<std::int64_t>();
    if (n < min)
        fail(path, fmt::format("expected a value >= {}", min));
    return n;
}

double require_number(const json& v, const std::string& path)
{
    if (!v.is_number())
        fail(path, "expected a number");
    return v.get<double>();
}

bool require_bool(const json& v, const std::string& path)
{
    if (!v.is_boolean())
        fail(path, "expected a boolean");
    return v.get<bool>();
}

void require_array(const json& v, const std::string& path)
{
    if (!v.is_array())
        fail(path, "expected an array");
}

void validate_box(const json& v, const std::string& path)
{
    if (!v.is_array() || v.size() != 4)
        fail(path, "expected 4 integers");
    for (const auto& c: v)
        if (!c.is_number_integer())
            fail(path, "expected 4 integers");
}

void validate_message(const json& m, const std::string& path, bool masked)
{
    require_object(m, path, { "role", "segments", "trainable", "trainable_spans" });
    require_string(m["role"], path + ".role");
    const auto role = parse_role(m["role"].get<std::string>());
    if (!role)
        fail(path + ".role", "unknown role");
    const auto trainable = require_bool(m["trainable"], path + ".trainable");
    if (trainable && (*role != Role::Assistant || masked))
        fail(path + ".trainable", masked ? "masked trajectory has a trainable message" : "only assistant text is trainable");

    const auto& segments = m["segments"];
    require_array(segments, path + ".segments");
    for (std::size_t i = 0; i < segments.size(); ++i)
    {
        const auto sp = fmt::format("{}.segments[{}]", path, i);
        if (!segments[i].is_object() || !segments[i].contains("type"))
            fail(sp, "missing field 'type'");
        const auto& type = segments[i]["type"];
        if (type == "text")
        {
            require_object(segments[i], sp, { "type", "text" });
            require_string(segments[i]["text"], sp + ".text");
        }
        else if (type == "image")
        {
            require_object(segments[i], sp, { "type", "ref", "width", "height" });
            require_string(segments[i]["ref"], sp + ".ref");
            require_integer(segments[i]["width"], sp + ".width", 1);
            require_integer(segments[i]["height"], sp + ".height", 1);
        }
        else
            fail(sp + ".type", "expected 'text' or 'image'");
    }

    const auto& spans = m["trainable_spans"];
    require_array(spans, path + ".trainable_spans");
    if (!trainable && !spans.empty())
        fail(path + ".trainable_spans", "spans on a non-trainable message");
    for (std::size_t i = 0; i < spans.size(); ++i)
    {
        const auto sp = fmt::format("{}.trainable_spans[{}]", path, i);
        if (!spans[i].is_array() || spans[i].size() != 3)
            fail(sp, "expected [segment, begin, end]");
        const auto seg = static_cast<std::size_t>(require_integer(spans[i][0], sp));
        const auto begin = static_cast<std::size_t>(require_integer(spans[i][1], sp));
        const auto end = static_cast<std::size_t>(require_integer(spans[i][2], sp));
        if (seg >= segments.size() || segments[seg]["type"] != "text")
            fail(sp, "span does not reference a text segment");
        if (begin > end || end > segments[seg]["text"].get_ref<const std::string&>().size())
            fail(sp, "span out of bounds");
    }
}

void validate_tool_event(const json& e, const std::string& path)
{
    require_object(e, path, { "name", "arguments", "status", "message", "image_ref", "image_pixels", "region" });
    require_string(e["name"], path + ".name");
    const auto& name = e["name"].get_ref<const std::string&>();
    const auto& args = e["arguments"];
    if (name == kZoomInName)
    {
        require_object(args, path + ".arguments", { "image_index", "bbox", "label" });
        validate_box(args["bbox"], path + ".arguments.bbox");
        require_string(args["label"], path + ".arguments.label");
    }
    else if (name == kLookbackName)
    {
        require_object(args, path + ".arguments", { "image_index", "reason" });
        require_string(args["reason"], path + ".arguments.reason");
    }
    else
        fail(path + ".name", "unknown tool");
    require_integer(args["image_index"], path + ".arguments.image_index", std::numeric_limits<std::int64_t>::min());

    require_string(e["status"], path + ".status");
    if (e["status"] != "ok" && e["status"] != "error")
        fail(path + ".status", "expected 'ok' or 'error'");
    require_string(e["message"], path + ".message");
    require_string(e["image_ref"], path + ".image_ref");
    require_integer(e["image_pixels"], path + ".image_pixels");
    if (!e["region"].is_null())
        validate_box(e["region"], path + ".region");
}

} // namespace

void validate_export_record(const json& record)
{
    const auto& r = require_object(record, "record",
                                   { "schema_version", "prompt_id", "group_id", "member_id", "question",
                                     "image_manifest", "messages", "tool_events", "reward", "advantage", "validity",
                                     "trajectory_masked", "final_answer", "turn_count", "prompt_tokens",
                                     "completion_tokens", "context_truncated", "created_at" });
    if (require_integer(r["schema_version"], "schema_version") != kExportSchemaVersion)
        fail("schema_version", fmt::format("unsupported version (expected {})", kExportSchemaVersion));
    require_string(r["prompt_id"], "prompt_id");
    require_integer(r["group_id"], "group_id");
    require_integer(r["member_id"], "member_id");
    require_string(r["question"], "question");
    require_string(r["created_at"], "created_at");
    require_integer(r["turn_count"], "turn_count");
    require_integer(r["prompt_tokens"], "prompt_tokens");
    require_integer(r["completion_tokens"], "completion_tokens");
    require_bool(r["context_truncated"], "context_truncated");
    if (!r["final_answer"].is_null())
        require_string(r["final_answer"], "final_answer");

    require_string(r["validity"], "validity");
    const auto validity = parse_validity(r["validity"].get<std::string>());
    if (!validity)
        fail("validity", "unknown validity");
    const auto masked = require_bool(r["trajectory_masked"], "trajectory_masked");
    if (*validity != Validity::Valid && !masked)
        fail("trajectory_masked", "invalid trajectory is not masked");
    const auto advantage = require_number(r["advantage"], "advantage");
    if (masked && advantage != 0.0)
        fail("advantage", "masked trajectory has a nonzero advantage");

    const auto& images = r["image_manifest"];
    require_array(images, "image_manifest");
    for (std::size_t i = 0; i < images.size(); ++i)
    {
        const auto path = fmt::format("image_manifest[{}]", i);
        require_object(images[i], path,
                       { "index", "path", "original_width", "original_height", "served_width", "served_height" });
        if (require_integer(images[i]["index"], path + ".index") != static_cast<std::int64_t>(i))
            fail(path + ".index", "indices must be consecutive from 0");
        require_string(images[i]["path"], path + ".path");
        for (auto key: { "original_width", "original_height", "served_width", "served_height" })
            require_integer(images[i][key], fmt::format("{}.{}", path, key), 1);
    }

    const auto& messages = r["messages"];
    require_array(messages, "messages");
    for (std::size_t i = 0; i < messages.size(); ++i)
        validate_message(messages[i], fmt::format("messages[{}]", i), masked);

    const auto& events = r["tool_events"];
    require_array(events, "tool_events");
    for (std::size_t i = 0; i < events.size(); ++i)
        validate_tool_event(events[i], fmt::format("tool_events[{}]", i));

    const auto& reward = require_object(r["reward"], "reward", { "r_acc", "tool_gain", "r_format", "a", "b", "c", "total" });
    for (auto key: { "r_acc", "tool_gain" })
    {
        const auto v = require_integer(reward[key], fmt::format("reward.{}", key));
        if (v > 1)
            fail(fmt::format("reward.{}", key), "expected 0 or 1");
    }
    const auto r_format = require_number(reward["r_format"], "reward.r_format");
    if (r_format < 0.0 || r_format > 1.0)
        fail("reward.r_format", "expected a value in [0, 1]");
    for (auto key: { "a", "b", "c", "total" })
        require_number(reward[key], fmt::format("reward.{}", key));
}

std::string dump_record(const json& record)
{
    return record.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::size_t export_group(const MaskedGroup& group, std::ostream& sink, const std::string& created_at)
{
    if (group.trajectories.empty())
        throw std::invalid_argument("cannot export an empty group");

    auto buffer = std::string {};
    for (std::size_t i = 0; i < group.trajectories.size(); ++i)
    {
        const auto record = export_record(group, i, created_at);
        try
        {
            validate_export_record(record);
        }
        catch (const SchemaError& e)
        {
            throw SchemaError(fmt::format("group {} member {}: {}", group.group_id, i, e.what()));
        }
        buffer += dump_record(record);
        buffer += '\n';
    }

    sink.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    sink.flush();
    if (!sink)
        throw Error(fmt::format("failed to write export for group {}", group.group_id));
    return group.trajectories.size();
}

ExportCheckReport check_export_stream(std::istream& in)
{
    auto report = ExportCheckReport {};
    auto line = std::string {};
    for (std::size_t n = 1; std::getline(in, line); ++n)
    {
        if (detail::trim(line).empty())
            continue;
        ++report.records;
        auto doc = json::parse(line, nullptr, false);
        if (doc.is_discarded())
        {
            report.errors.push_back(fmt::format("line {}: not valid JSON", n));
            continue;
        }
        try
        {
            validate_export_record(doc);
        }
        catch (const SchemaError& e)
        {
            report.errors.push_back(fmt::format("line {}: {}", n, e.what()));
        }
    }
    return report;
}

std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    auto tm = std::tm {};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace visagent
