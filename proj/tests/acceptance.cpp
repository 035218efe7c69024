// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one line per criterion, nonzero exit when any fails.
#include <visagent/data_pipeline.hpp>
#include <visagent/errors.hpp>
#include <visagent/export.hpp>
#include <visagent/image_io.hpp>
#include <visagent/reward.hpp>
#include <visagent/segmentation.hpp>
#include <visagent/tool_protocol.hpp>
#include <visagent/visual_tools.hpp>

#include "test_support.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <regex>
#include <set>
#include <sstream>

using namespace visagent;
using namespace visagent::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace
{

struct Outcome
{
    bool pass = false;
    std::string detail;
};

struct Context
{
    fs::path cli;
    fs::path data;
};

Outcome fail(std::string detail)
{
    return { false, std::move(detail) };
}

int run_command(const std::string& command)
{
    const auto status = std::system(command.c_str());
    return status == -1 ? -1 : WEXITSTATUS(status);
}

std::string quote(const fs::path& p)
{
    return "'" + p.string() + "'";
}

// ---- 1 -------------------------------------------------------------------

// Oracle: with a = 1, b = 1/2, c = 1/10 and r_format = q/4 the total is the
// exact rational (r_acc (40 + 20 gain) + q) / 40; its nearest double is one
// correctly rounded division of small integers.
Outcome reward_table(const Context&)
{
    const auto k = RewardCoefficients {};
    auto cases = 0;
    for (int r_acc = 0; r_acc <= 1; ++r_acc)
        for (int gain = 0; gain <= 1; ++gain)
            for (int q = 0; q <= 4; ++q)
            {
                const auto expected = static_cast<double>(r_acc * (40 + 20 * gain) + q) / 40.0;
                const auto got = reward_total(r_acc, gain, q / 4.0, k);
                ++cases;
                if (got != expected)
                    return fail(fmt::format("r_acc={} gain={} format={}: got {:.17g}, want {:.17g}", r_acc, gain,
                                            q / 4.0, got, expected));
            }
    return { true, fmt::format("{} totals exact", cases) };
}

// ---- 2 -------------------------------------------------------------------

Outcome advantage_normalization(const Context&)
{
    auto rng = std::mt19937_64(2024);
    auto level = std::uniform_int_distribution<int>(0, 40);
    auto flat = 0;
    auto worst_mean = 0.0L;
    auto worst_std = 0.0L;
    for (int g = 0; g < 1000; ++g)
    {
        auto rewards = std::vector<double>(8);
        // Every tenth group is constant to exercise the zero-variance path.
        const auto constant = g % 10 == 0;
        const auto base = level(rng) / 40.0 * 1.6;
        for (auto& r: rewards)
            r = constant ? base : level(rng) / 40.0 * 1.6;
        const auto result = group_advantages(rewards, std::vector<bool>(8, true));

        auto mean = 0.0L;
        for (auto r: rewards)
            mean += r;
        mean /= 8;
        auto var = 0.0L;
        for (auto r: rewards)
            var += (r - mean) * (r - mean);
        const auto sd = std::sqrt(var / 8);

        if (sd <= kAdvantageEpsilon)
        {
            ++flat;
            for (auto a: result.advantages)
                if (a != 0.0)
                    return fail(fmt::format("group {}: zero-variance group has advantage {}", g, a));
            continue;
        }
        auto a_mean = 0.0L;
        for (auto a: result.advantages)
            a_mean += a;
        a_mean /= 8;
        auto a_var = 0.0L;
        for (auto a: result.advantages)
            a_var += (a - a_mean) * (a - a_mean);
        const auto a_sd = std::sqrt(a_var / 8);
        worst_mean = std::max(worst_mean, std::fabs(a_mean));
        worst_std = std::max(worst_std, std::fabs(a_sd - 1.0L));
        if (std::fabs(a_mean) > 1e-9L || std::fabs(a_sd - 1.0L) > 1e-6L)
            return fail(fmt::format("group {}: mean {:.3e}, std {:.12f}", g, static_cast<double>(a_mean),
                                    static_cast<double>(a_sd)));
    }
    return { true, fmt::format("1000 groups ({} zero-variance), max |mean| {:.1e}, max |std-1| {:.1e}", flat,
                               static_cast<double>(worst_mean), static_cast<double>(worst_std)) };
}

// ---- 3 -------------------------------------------------------------------

std::string random_turn(std::mt19937_64& rng)
{
    switch (rng() % 6)
    {
        case 0: return zoom_turn(0, rng() % 300, rng() % 200, 310 + rng() % 90, 210 + rng() % 90, "detail");
        case 1: return zoom_turn(static_cast<std::int64_t>(rng() % 3), 5, 5, 60, 60, "maybe");
        case 2: return lookback_turn(static_cast<std::int64_t>(rng() % 2));
        case 3: return think("thinking without acting");
        case 4: return "no tags at all <tool_call>{broken";
        default: return zoom_turn(1, 0, 0, 1000, 1000, "whole");
    }
}

Outcome mask_soundness(const Context&)
{
    auto rng = std::mt19937_64(33);
    const auto images = ImageSet::prepare({ { "a.png", noise_image(400, 300, 1) }, { "b.png", noise_image(250, 250, 2) } },
                                          kDefaultTrainPixelBudget);
    auto limits = RunLimits {};
    auto episodes = 0;
    auto masked_episodes = 0;
    auto checked_bytes = std::size_t { 0 };
    for (int group_index = 0; group_index < 20; ++group_index)
    {
        auto members = std::vector<Trajectory> {};
        auto replies = std::vector<std::vector<std::string>> {};
        for (int m = 0; m < 5; ++m)
        {
            auto script = std::vector<std::string> {};
            const auto turns = rng() % 8;
            for (std::size_t i = 0; i < turns; ++i)
                script.push_back(random_turn(rng));
            const auto answer = rng() % 2 ? std::string("red") : std::string("blue");
            const auto endpoint = FnEndpoint(sequence(script, answer));
            auto spec = EpisodeSpec {};
            spec.prompt_id = fmt::format("g{}", group_index);
            spec.question = "Which colour is the car?";
            spec.seed = rng();
            auto t = run_trajectory(spec, images, endpoint, limits, static_cast<std::size_t>(m));
            t.reward = compute_reward(t, AnswerKey { AnswerKind::Exact, "red", {} }, nullptr, {});

            auto issued = std::vector<std::string> {};
            for (int k = 0; k < t.turn_count; ++k)
                issued.push_back(static_cast<std::size_t>(k) < script.size() ? script[k] : answer_turn(answer));
            replies.push_back(std::move(issued));
            members.push_back(std::move(t));
            ++episodes;
        }
        const auto group = make_masked_group(fmt::format("g{}", group_index), group_index, std::move(members));
        for (std::size_t m = 0; m < group.trajectories.size(); ++m)
        {
            const auto record = export_record(group, m, "t");
            const auto masked = record["trajectory_masked"].get<bool>();
            masked_episodes += masked ? 1 : 0;
            if (masked && record["advantage"].get<double>() != 0.0)
                return fail(fmt::format("group {} member {}: masked with advantage {}", group_index, m,
                                        record["advantage"].dump()));

            auto trainable_text = std::string {};
            auto assistant_text = std::string {};
            for (const auto& message: record["messages"])
            {
                const auto assistant = message["role"] == "assistant";
                const auto trainable = message["trainable"].get<bool>();
                if (trainable && (!assistant || masked))
                    return fail(fmt::format("group {} member {}: {} message is trainable", group_index, m,
                                            message["role"].get<std::string>()));
                if (!trainable && !message["trainable_spans"].empty())
                    return fail("spans on a non-trainable message");
                if (assistant)
                    for (const auto& s: message["segments"])
                        assistant_text += s["text"].get<std::string>();
                for (const auto& span: message["trainable_spans"])
                {
                    const auto& text = message["segments"][span[0].get<std::size_t>()]["text"].get_ref<const std::string&>();
                    trainable_text += text.substr(span[1].get<std::size_t>(),
                                                  span[2].get<std::size_t>() - span[1].get<std::size_t>());
                }
            }
            auto expected = std::string {};
            for (const auto& r: replies[m])
                expected += r;
            if (assistant_text != expected)
                return fail(fmt::format("group {} member {}: assistant messages differ from the issued replies",
                                        group_index, m));
            if (!masked && trainable_text != expected)
                return fail(fmt::format("group {} member {}: trainable spans do not reconstruct the assistant turns",
                                        group_index, m));
            if (masked && !trainable_text.empty())
                return fail("masked trajectory has trainable bytes");
            checked_bytes += expected.size();
        }
    }
    if (masked_episodes == 0 || masked_episodes == episodes)
        return fail(fmt::format("corpus lacks variety: {} of {} masked", masked_episodes, episodes));
    return { true, fmt::format("{} episodes ({} masked), {} assistant bytes reconstructed", episodes, masked_episodes,
                               checked_bytes) };
}

// ---- 4 -------------------------------------------------------------------

Outcome validity_taxonomy(const Context&)
{
    const auto images = ImageSet::prepare({ { "a.png", noise_image(400, 300, 1) } }, kDefaultTrainPixelBudget);
    const auto limits = RunLimits {};
    auto spec = EpisodeSpec {};
    spec.prompt_id = "v";
    spec.question = "What is shown?";

    auto run = [&](const FnEndpoint::Fn& fn, const RunLimits& l) {
        const auto endpoint = FnEndpoint(fn);
        return run_trajectory(spec, images, endpoint, l);
    };
    auto checks = std::vector<std::tuple<std::string, Validity, Validity>> {};

    // Runtime episodes.
    const auto always_zoom = run([](const ChatRequest&) { return Generation { zoom_turn(0, 0, 0, 100, 100), std::nullopt }; },
                                 limits);
    checks.emplace_back("runtime: never stops calling tools", always_zoom.validity, Validity::InvalidMaxTurns);

    const auto long_answer = run(
        [](const ChatRequest&) { return Generation { answer_turn("A"), TokenUsage { 100, 20'481 } }; }, limits);
    checks.emplace_back("runtime: 20,481 response tokens", long_answer.validity, Validity::InvalidMaxLength);

    auto tight = limits;
    tight.max_input_tokens = 16;
    const auto overflow = run(sequence({}), tight);
    checks.emplace_back("runtime: context exhausted before any answer", overflow.validity, Validity::InvalidNoAnswer);

    const auto two_tools = run(sequence({ zoom_turn(0, 0, 0, 100, 100), lookback_turn(0) }, "A"), limits);
    checks.emplace_back("runtime: two tool calls then answer", two_tools.validity, Validity::Valid);
    if (two_tools.tool_call_count() != 2)
        return fail(fmt::format("two-tool episode made {} calls", two_tools.tool_call_count()));

    // Constructed episodes.
    auto turn = [](ActionKind kind, std::int64_t tokens = 10) { return TurnRecord { kind, {}, tokens, {} }; };
    auto six_calls = Trajectory {};
    for (int i = 0; i < 6; ++i)
        six_calls.turns.push_back(turn(ActionKind::ToolCall));
    six_calls.completion_tokens = 60;
    checks.emplace_back("constructed: 6 tool calls, limit 5", classify_validity(six_calls, limits),
                        Validity::InvalidMaxTurns);

    auto too_long = Trajectory {};
    too_long.turns = { turn(ActionKind::ToolCall), turn(ActionKind::Answer, 20'000) };
    too_long.completion_tokens = 20'481;
    too_long.final_answer = "A";
    checks.emplace_back("constructed: 20,481 tokens", classify_validity(too_long, limits), Validity::InvalidMaxLength);

    auto no_answer = Trajectory {};
    no_answer.turns = { turn(ActionKind::ToolCall), turn(ActionKind::Malformed) };
    no_answer.completion_tokens = 20;
    checks.emplace_back("constructed: no answer", classify_validity(no_answer, limits), Validity::InvalidNoAnswer);

    auto valid = Trajectory {};
    valid.turns = { turn(ActionKind::ToolCall), turn(ActionKind::ToolCall), turn(ActionKind::Answer) };
    valid.completion_tokens = 30;
    valid.final_answer = "A";
    checks.emplace_back("constructed: 2 tool calls + answer", classify_validity(valid, limits), Validity::Valid);

    for (const auto& [name, got, want]: checks)
        if (got != want)
            return fail(fmt::format("{}: got {}, want {}", name, to_string(got), to_string(want)));
    return { true, fmt::format("{} episodes classified as expected", checks.size()) };
}

// ---- 5 -------------------------------------------------------------------

Outcome geometry(const Context&)
{
    auto rng = std::mt19937_64(5);
    auto side = std::uniform_int_distribution<int>(1, 600);
    const auto extremes = std::vector<std::int64_t> { std::numeric_limits<std::int64_t>::min(),
                                                      std::numeric_limits<std::int64_t>::max(), -1, 0, 1 };
    auto boxes = 0;
    auto errors = 0;
    auto identities = 0;
    for (int s = 0; s < 200; ++s)
    {
        const auto w = side(rng);
        const auto h = side(rng);
        const auto area = static_cast<std::int64_t>(w) * h;
        const auto cap = area + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(4 * area));
        const auto set = ImageSet::prepare({ { "img", cv::Mat(h, w, CV_8UC3, cv::Scalar::all(90)) } },
                                           kDefaultTrainPixelBudget, cap);
        if (set.at(0).width() != w || set.at(0).height() != h)
            return fail("small image was rescaled");

        for (int b = 0; b < 50; ++b, ++boxes)
        {
            // Mostly ordered boxes around the image, some unordered, some at int64 extremes.
            auto pick = [&](int extent) {
                if (rng() % 10 == 0)
                    return extremes[rng() % extremes.size()];
                return std::uniform_int_distribution<std::int64_t>(-extent / 2, extent + extent / 2)(rng);
            };
            auto box = BBox { pick(w), pick(h), pick(w), pick(h) };
            if (rng() % 5 != 0)
            {
                if (box.x1 > box.x2)
                    std::swap(box.x1, box.x2);
                if (box.y1 > box.y2)
                    std::swap(box.y1, box.y2);
            }

            const auto clamped = clamp_box(box, w, h);
            if (clamped.x1 < 0 || clamped.y1 < 0 || clamped.x2 > w || clamped.y2 > h)
                return fail(fmt::format("clamp_box left the image: [{},{},{},{}] on {}x{}", clamped.x1, clamped.y1,
                                        clamped.x2, clamped.y2, w, h));

            const auto region = crop_region(box, w, h);
            const auto result = execute_zoom_in(set, ZoomIn { 0, box, "probe" });
            if (!region)
            {
                ++errors;
                if (clamped.width() > 0 && clamped.height() > 0)
                    return fail("crop_region refused a non-empty clamped box");
                if (result.ok())
                    return fail("zoom_in succeeded on an empty box");
                continue;
            }
            const auto min_w = std::min<std::int64_t>(kPatchSide, w);
            const auto min_h = std::min<std::int64_t>(kPatchSide, h);
            if (region->x1 < 0 || region->y1 < 0 || region->x2 > w || region->y2 > h || region->width() < min_w ||
                region->height() < min_h)
                return fail(fmt::format("crop region [{},{},{},{}] violates bounds or the {}-px minimum on {}x{}",
                                        region->x1, region->y1, region->x2, region->y2, kPatchSide, w, h));
            if (!result.ok())
                return fail(fmt::format("zoom_in failed on a valid box: {}", result.message));
            if (result.image_pixels > cap ||
                static_cast<std::int64_t>(result.image.cols) * result.image.rows != result.image_pixels)
                return fail(fmt::format("zoom output {} px exceeds the cap {}", result.image_pixels, cap));
        }

        // Full-image request: identity unless a 2x zoom fits the cap.
        const auto full = execute_zoom_in(set, ZoomIn { 0, BBox { 0, 0, w, h }, "all" });
        if (4 * area > cap)
        {
            ++identities;
            if (!full.ok() || full.image.cols != w || full.image.rows != h)
                return fail(fmt::format("identity crop of {}x{} returned {}x{}", w, h, full.image.cols, full.image.rows));
        }
    }
    return { true, fmt::format("{} boxes on 200 images ({} rejected as empty), {} identity crops", boxes, errors,
                               identities) };
}

// ---- 6 -------------------------------------------------------------------

std::vector<std::string> lines_without_timestamps(const fs::path& path)
{
    static const auto created_at = std::regex(R"("created_at":"[^"]*")");
    auto out = std::vector<std::string> {};
    auto in = std::ifstream(path, std::ios::binary);
    for (std::string line; std::getline(in, line);)
        out.push_back(std::regex_replace(line, created_at, R"("created_at":"")"));
    return out;
}

Outcome golden_run(const Context& ctx)
{
    const auto dir = TempDir();
    const auto golden = ctx.data / "golden";
    const auto export_path = dir / "rollout.jsonl";
    const auto command = fmt::format("{} --log-level warn --config {} rollout --manifest {} --out {} > {} 2> {}",
                                     quote(ctx.cli), quote(golden / "config.json"), quote(golden / "manifest.jsonl"),
                                     quote(export_path), quote(dir / "summary.json"), quote(dir / "stderr.txt"));
    const auto code = run_command(command);
    if (code != 0)
        return fail(fmt::format("rollout exited with {}: {}", code, read_text(dir / "stderr.txt")));

    const auto got = lines_without_timestamps(export_path);
    const auto want = lines_without_timestamps(golden / "golden_export.jsonl");
    if (got != want)
    {
        for (std::size_t i = 0; i < std::min(got.size(), want.size()); ++i)
            if (got[i] != want[i])
                return fail(fmt::format("record {} differs from the golden file", i));
        return fail(fmt::format("{} records, golden has {}", got.size(), want.size()));
    }
    if (got.empty())
        return fail("empty export");

    const auto record = json::parse(got.front());
    const auto names = std::vector<std::string> { record["tool_events"][0]["name"], record["tool_events"][1]["name"] };
    if (names != std::vector<std::string> { "zoom_in", "lookback_reuse" })
        return fail("golden trajectory does not follow zoom_in -> lookback_reuse -> answer");
    if (record["reward"]["total"].get<double>() != 1.6)
        return fail(fmt::format("reward total {}", record["reward"]["total"].dump()));
    return { true, fmt::format("{} record(s) byte-identical modulo created_at, reward 1.6", got.size()) };
}

// ---- 7 -------------------------------------------------------------------

Outcome difficulty_band(const Context&)
{
    const auto images = std::make_shared<const ImageSet>(
        ImageSet::prepare({ { "a.png", noise_image(300, 200, 4) } }, kDefaultTrainPixelBudget));
    auto qas = std::vector<QACandidate> {};
    for (int k = 0; k <= 5; ++k)
    {
        auto qa = QACandidate {};
        qa.qa_id = fmt::format("qa{}", k);
        qa.images = images;
        qa.image_paths = { "a.png" };
        qa.question = fmt::format("Item {} asks for the colour of the flag", k);
        qa.answer = "green";
        qa.status = QAStatus::Verified;
        qas.push_back(std::move(qa));
    }
    // Item k is answered correctly by rollouts 0..k-1 of 5.
    const auto base = FnEndpoint([](const ChatRequest& r) {
        const auto text = first_user_text(r.messages);
        const auto k = static_cast<std::size_t>(text.at(text.find("Item ") + 5) - '0');
        return Generation { answer_turn(r.rollout_index < k ? "green" : "purple"), std::nullopt };
    });
    const auto records = calibrate_difficulty(qas, base, CalibrationParams {});
    auto kept = std::set<int> {};
    for (int k = 0; k <= 5; ++k)
    {
        if (records[k].correct_count != k || records[k].rollouts != 5)
            return fail(fmt::format("qa{}: {} of {} correct", k, records[k].correct_count, records[k].rollouts));
        if (records[k].kept)
            kept.insert(k);
    }
    if (kept != std::set<int> { 1, 2, 3, 4 })
        return fail("kept set differs from {1,2,3,4}");
    return { true, "correct counts 0..5 of 5 keep exactly {1,2,3,4}" };
}

// ---- 8 -------------------------------------------------------------------

Outcome parser_fuzz(const Context&)
{
    const auto seeds = std::vector<std::string> {
        zoom_turn(0, 10, 10, 100, 100),
        lookback_turn(1),
        answer_turn("B"),
        "<think>a <answer>x</answer></think><answer>y</answer>",
        "<think></think><tool_call>{\"name\":\"zoom_in\",\"arguments\":{}}</tool_call>",
    };
    const auto fragments = std::vector<std::string> { "<think>", "</think>", "<tool_call>", "</tool_call>", "<answer>",
                                                      "</answer>", "{", "}", "[", "]", "\"", ":", ",", "\\u0000",
                                                      "\xff", "\xc3", "<", ">", "</", "null", "1e999", "-" };
    auto rng = std::mt19937_64(8);
    constexpr auto kInputs = 100'000;
    auto parsed = 0;
    auto malformed = 0;
    auto aborts = 0;
    for (int i = 0; i < kInputs; ++i)
    {
        auto text = seeds[rng() % seeds.size()];
        const auto mutations = 1 + rng() % 6;
        for (std::size_t m = 0; m < mutations; ++m)
        {
            const auto pos = text.empty() ? 0 : rng() % (text.size() + 1);
            switch (rng() % 4)
            {
                case 0: text.insert(pos, fragments[rng() % fragments.size()]); break;
                case 1:
                    if (!text.empty())
                        text.erase(std::min(pos, text.size() - 1), 1 + rng() % 8);
                    break;
                case 2:
                    if (!text.empty())
                        text[std::min(pos, text.size() - 1)] = static_cast<char>(rng() % 256);
                    break;
                default:
                {
                    const auto from = text.empty() ? 0 : rng() % text.size();
                    text.insert(pos, text.substr(from, rng() % 16));
                    break;
                }
            }
        }
        try
        {
            const auto turn = parse_turn(text);
            const auto kinds = int(turn.is_tool_call()) + int(turn.is_answer()) + int(turn.is_malformed());
            if (kinds != 1)
                ++aborts;
            else if (turn.is_malformed())
                ++malformed;
            else
                ++parsed;
        }
        catch (...)
        {
            ++aborts;
        }
    }
    if (aborts != 0 || malformed + parsed != kInputs)
        return fail(fmt::format("{} aborts, {} malformed + {} parsed of {}", aborts, malformed, parsed, kInputs));
    return { true, fmt::format("{} inputs: {} malformed + {} parsed, 0 aborts", kInputs, malformed, parsed) };
}

// ---- 9 -------------------------------------------------------------------

Outcome poster_segmentation(const Context&)
{
    auto report = std::vector<std::string> {};

    // Two blocks with a 100-px gutter centred on x = 650.
    const auto two = block_poster({ 1300, 1000 }, { { 0, 0, 600, 1000 }, { 700, 0, 600, 1000 } }, 1);
    const auto s2 = segment_poster(two);
    if (s2.regions.size() != 2)
        return fail(fmt::format("2-block poster gave {} regions", s2.regions.size()));
    for (const auto& cut: s2.cuts)
        if (cut.axis != CutLine::Axis::Vertical || std::abs(cut.position - 650) > 5)
            return fail(fmt::format("2-block cut at {} (gutter center 650)", cut.position));
    report.push_back(fmt::format("2-block cut {}", s2.cuts.front().position));

    // 2x2 grid: gutter g, cells of (side - 3g) / 2, inner gutter centred on g + cell + g/2.
    constexpr auto kSide = 1200;
    constexpr auto kGutter = 60;
    const auto grid = grid_poster({ kSide, kSide }, 2, 2, kGutter, 2);
    const auto cell = (kSide - 3 * kGutter) / 2;
    const auto center = kGutter + cell + kGutter / 2.0;
    const auto s4 = segment_poster(grid);
    if (s4.regions.size() != 4)
        return fail(fmt::format("2x2 poster gave {} regions", s4.regions.size()));
    auto axes = std::set<CutLine::Axis> {};
    for (const auto& cut: s4.cuts)
    {
        axes.insert(cut.axis);
        if (std::fabs(cut.position - center) > 5.0)
            return fail(fmt::format("2x2 cut at {} (gutter center {})", cut.position, center));
    }
    if (axes.size() != 2)
        return fail("2x2 poster was not cut along both axes");
    const auto& r = s4.regions;
    if (!(r[0].x < r[1].x && r[0].y < r[2].y && r[2].x < r[3].x))
        return fail("2x2 regions are not in reading order");
    report.push_back(fmt::format("2x2 cuts within 5 px of {}", center));
    return { true, fmt::format("{}; {}", report[0], report[1]) };
}

// ---- 10 ------------------------------------------------------------------

std::map<std::string, std::string> tree_contents(const fs::path& root)
{
    auto out = std::map<std::string, std::string> {};
    for (const auto& entry: fs::recursive_directory_iterator(root))
        if (entry.is_regular_file())
            out[fs::relative(entry.path(), root).generic_string()] = read_text(entry.path());
    return out;
}

Outcome curate_determinism(const Context& ctx)
{
    const auto dir = TempDir();
    fs::create_directories(dir / "sources");
    auto sources = std::string {};
    auto generator = json::array();
    auto base = json::array();
    const auto ids = std::vector<std::string> { "poster0", "poster1", "poster2", "natural0" };
    for (std::size_t i = 0; i < ids.size(); ++i)
    {
        const auto& id = ids[i];
        const auto file = id + ".png";
        const auto poster = id.starts_with("poster");
        write_png(dir / "sources" / file, poster ? grid_poster({ 1200, 1100 }, 2, 2, 60, i + 1) : noise_image(1200, 1000, i));
        sources += json { { "source_id", id }, { "kind", poster ? "poster" : "natural" }, { "images", { file } } }.dump() + "\n";

        const auto answer = fmt::format("label {}", i);
        const auto payload = json { { "question", fmt::format("Which label is printed in the top left panel of {} here?", id) },
                                    { "answer", answer },
                                    { "reasoning_steps",
                                      { { { "step", "Read the top left panel." },
                                          { "confidence_region",
                                            { { "image_index", 0 }, { "bbox", { 0, 0, 64, 64 } } } } } } } };
        generator.push_back({ { "match", "Source: " + id + "\n" }, { "turns", { payload.dump() } } });
        base.push_back({ { "match", "panel of " + id + " " },
                         { "rollouts",
                           { { answer_turn(answer) }, { answer_turn("unsure") }, { answer_turn(answer) },
                             { answer_turn("unsure") }, { answer_turn("unsure") } } } });
    }
    write_text(dir / "sources" / "sources.jsonl", sources);
    write_text(dir / "generator.json", json { { "scripts", generator } }.dump(2));
    write_text(dir / "base.json", json { { "scripts", base } }.dump(2));
    write_text(dir / "verifier.json", json::array({ R"({"uniqueness": "pass", "reasoning": "pass"})" }).dump());
    write_text(dir / "reviser.json", json::array({ "unused" }).dump());
    auto role = [](const char* script) { return json { { "kind", "scripted" }, { "script", script } }; };
    const auto config = json { { "endpoint", role("base.json") },
                               { "rollout", { { "seed", 11 } } },
                               { "curate",
                                 { { "seed", 5 },
                                   { "generator", role("generator.json") },
                                   { "verifier", role("verifier.json") },
                                   { "reviser", role("reviser.json") },
                                   { "base", role("base.json") } } } };
    write_text(dir / "config.json", config.dump(2));

    for (const auto* run: { "run_a", "run_b" })
    {
        const auto command = fmt::format("{} --log-level warn --config {} curate --sources {} --out {} > {} 2> {}",
                                         quote(ctx.cli), quote(dir / "config.json"),
                                         quote(dir / "sources" / "sources.jsonl"), quote(dir / run),
                                         quote(dir / (std::string(run) + ".json")),
                                         quote(dir / (std::string(run) + ".log")));
        if (const auto code = run_command(command); code != 0)
            return fail(fmt::format("curate {} exited with {}: {}", run, code,
                                    read_text(dir / (std::string(run) + ".log"))));
    }
    const auto a = tree_contents(dir / "run_a");
    const auto b = tree_contents(dir / "run_b");
    if (a.size() != b.size())
        return fail(fmt::format("{} files vs {}", a.size(), b.size()));
    for (const auto& [name, bytes]: a)
    {
        const auto other = b.find(name);
        if (other == b.end() || other->second != bytes)
            return fail(fmt::format("{} differs between runs", name));
    }
    const auto manifest = a.at("qa_manifest.jsonl");
    const auto records = static_cast<std::size_t>(std::count(manifest.begin(), manifest.end(), '\n'));
    if (records != ids.size())
        return fail(fmt::format("manifest has {} records, expected {}", records, ids.size()));
    if (json::parse(a.at("stats.json"))["status"] != "complete")
        return fail("curation did not complete");
    return { true, fmt::format("{} files byte-identical, {} QA records", a.size(), records) };
}

struct Criterion
{
    int id;
    const char* name;
    std::chrono::milliseconds limit;
    std::function<Outcome(const Context&)> run;
};

} // namespace

int main(int argc, char** argv)
{
    auto ctx = Context {};
    auto app = CLI::App { "visagent acceptance suite" };
    auto cli = std::string {};
    auto data = std::string {};
    app.add_option("--cli", cli, "path to the visagent executable")->required()->check(CLI::ExistingFile);
    app.add_option("--data", data, "test data directory")->required()->check(CLI::ExistingDirectory);
    CLI11_PARSE(app, argc, argv);
    ctx.cli = fs::absolute(cli);
    ctx.data = fs::absolute(data);

    using std::chrono::milliseconds;
    const auto criteria = std::vector<Criterion> {
        { 1, "reward formula table", milliseconds(1'000), reward_table },
        { 2, "advantage normalization", milliseconds(5'000), advantage_normalization },
        { 3, "mask soundness", milliseconds(10'000), mask_soundness },
        { 4, "validity taxonomy", milliseconds(1'000), validity_taxonomy },
        { 5, "geometry properties", milliseconds(30'000), geometry },
        { 6, "end-to-end golden run", milliseconds(5'000), golden_run },
        { 7, "difficulty band", milliseconds(1'000), difficulty_band },
        { 8, "parser robustness", milliseconds(120'000), parser_fuzz },
        { 9, "synthetic poster segmentation", milliseconds(5'000), poster_segmentation },
        { 10, "pipeline determinism", milliseconds(30'000), curate_determinism },
    };

    auto failures = 0;
    for (const auto& c: criteria)
    {
        const auto start = std::chrono::steady_clock::now();
        auto outcome = Outcome {};
        try
        {
            outcome = c.run(ctx);
        }
        catch (const std::exception& e)
        {
            outcome = fail(fmt::format("exception: {}", e.what()));
        }
        const auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start);
        if (outcome.pass && elapsed > c.limit)
            outcome = fail(fmt::format("{} (too slow)", outcome.detail));
        failures += outcome.pass ? 0 : 1;
        fmt::print("{} {:>2} {:<30} {:>9.1f} ms / {:>6} ms  {}\n", outcome.pass ? "PASS" : "FAIL", c.id, c.name,
                   elapsed.count(), c.limit.count(), outcome.detail);
        std::fflush(stdout);
    }
    fmt::print("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
