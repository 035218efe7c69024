// SPDX-License-Identifier: Apache-2.0
#include <visagent/harness.hpp>

#include <visagent/errors.hpp>
#include <visagent/export.hpp>
#include <visagent/image_io.hpp>
#include <visagent/reward.hpp>

#include "text_util.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <istream>
#include <ostream>

namespace visagent
{

using nlohmann::json;
namespace fs = std::filesystem;

json RolloutSummary::to_json() const
{
    return { { "prompts", prompts },
             { "groups_exported", groups_exported },
             { "records", records },
             { "failed_prompts", failed_prompts },
             { "failed_rollouts", failed_rollouts },
             { "reward_mean", reward_mean },
             { "valid_fraction", valid_fraction },
             { "mean_tool_calls", mean_tool_calls },
             { "errors", errors } };
}

RolloutSummary run_rollout(const RunConfig& config, const PromptManifest& manifest, const ModelEndpoint& policy,
                           const ModelEndpoint* judge, std::ostream& export_sink, const std::string& created_at)
{
    auto summary = RolloutSummary {};
    summary.prompts = manifest.items.size();
    const auto sampling = sampling_of(config.endpoint);
    const auto system_prompt = config.system_prompt.value_or(default_system_prompt());

    auto reward_sum = 0.0;
    auto valid = std::size_t { 0 };
    auto tool_calls = std::size_t { 0 };
    auto trajectories = std::size_t { 0 };

    const auto batch = static_cast<std::size_t>(config.rollout.batch_size);
    for (std::size_t start = 0; start < manifest.items.size(); start += batch)
    {
        const auto stop = std::min(manifest.items.size(), start + batch);
        spdlog::info("rollout batch {}-{} of {} prompts", start, stop - 1, manifest.items.size());
        for (auto i = start; i < stop; ++i)
        {
            const auto& item = manifest.items[i];
            try
            {
                const auto images = load_item_images(manifest, item, config.pixels.train_pixel_budget,
                                                     config.pixels.per_image_max_pixels);
                auto spec = EpisodeSpec {};
                spec.prompt_id = item.prompt_id;
                spec.question = item.question;
                spec.image_set_ref = item.prompt_id;
                spec.system_prompt = system_prompt;
                spec.sampling = sampling;
                spec.seed = detail::splitmix64(config.rollout.seed ^ detail::fnv1a(item.prompt_id));

                auto outcomes = run_group(spec, images, policy, config.limits, config.rollout.rollouts_per_prompt,
                                          config.rollout.concurrency);
                auto members = std::vector<Trajectory> {};
                for (auto& outcome: outcomes)
                {
                    if (!outcome.trajectory)
                    {
                        ++summary.failed_rollouts;
                        spdlog::warn("{}: rollout failed: {}", item.prompt_id, outcome.error);
                        continue;
                    }
                    auto t = std::move(*outcome.trajectory);
                    t.reward = compute_reward(t, item.key, judge, config.reward);
                    members.push_back(std::move(t));
                }

                const auto group = make_masked_group(item.prompt_id, i, std::move(members));
                summary.records += export_group(group, export_sink, created_at);
                ++summary.groups_exported;
                for (const auto& t: group.trajectories)
                {
                    reward_sum += t.reward->total;
                    valid += t.validity == Validity::Valid ? 1 : 0;
                    tool_calls += static_cast<std::size_t>(t.tool_call_count());
                    ++trajectories;
                }
                if (group.degenerate)
                    spdlog::warn("{}: no valid trajectory in the group; advantages are all zero", item.prompt_id);
            }
            catch (const Error& e)
            {
                ++summary.failed_prompts;
                summary.errors.push_back(fmt::format("{}: {}", item.prompt_id, e.what()));
                spdlog::error("{}: {}", item.prompt_id, e.what());
            }
            catch (const std::invalid_argument& e)
            {
                ++summary.failed_prompts;
                summary.errors.push_back(fmt::format("{}: {}", item.prompt_id, e.what()));
                spdlog::error("{}: {}", item.prompt_id, e.what());
            }
        }
    }

    if (trajectories > 0)
    {
        const auto n = static_cast<double>(trajectories);
        summary.reward_mean = reward_sum / n;
        summary.valid_fraction = static_cast<double>(valid) / n;
        summary.mean_tool_calls = static_cast<double>(tool_calls) / n;
    }
    return summary;
}

double AccuracyTally::accuracy() const noexcept
{
    return total == 0 ? 0.0 : 100.0 * correct / static_cast<double>(total);
}

json EvalReport::to_json() const
{
    auto subset_json = json::object();
    for (const auto& [name, tally]: subsets)
        subset_json[name] = { { "correct", tally.correct }, { "total", tally.total }, { "accuracy", tally.accuracy() } };
    auto item_json = json::array();
    for (const auto& r: items)
        item_json.push_back({ { "item_id", r.item_id },
                              { "subset", r.subset },
                              { "score", r.score },
                              { "tool_calls", r.tool_calls },
                              { "answer", detail::sanitize_utf8(r.answer) },
                              { "error", r.error } });
    return { { "subsets", std::move(subset_json) },
             { "overall",
               { { "correct", overall.correct }, { "total", overall.total }, { "accuracy", overall.accuracy() } } },
             { "failures", failures },
             { "mean_tool_calls", mean_tool_calls },
             { "tool_mix", tool_mix },
             { "items", std::move(item_json) } };
}

std::string EvalReport::to_text() const
{
    auto out = fmt::format("{:<16} {:>8} {:>6} {:>9}\n", "subset", "correct", "total", "accuracy");
    for (const auto& [name, tally]: subsets)
        out += fmt::format("{:<16} {:>8.2f} {:>6} {:>8.1f}%\n", name, tally.correct, tally.total, tally.accuracy());
    out += fmt::format("{:<16} {:>8.2f} {:>6} {:>8.1f}%\n", "overall", overall.correct, overall.total,
                       overall.accuracy());
    out += fmt::format("mean tool calls per item: {:.2f}\n", mean_tool_calls);
    auto mix = std::string {};
    for (const auto& [name, count]: tool_mix)
        mix += fmt::format("{}{}={}", mix.empty() ? "" : ", ", name, count);
    out += fmt::format("tool mix: {}\n", mix.empty() ? "none" : mix);
    out += fmt::format("failed items: {}\n", failures);
    return out;
}

EvalReport run_evaluation(const RunConfig& config, const PromptManifest& dataset, const ModelEndpoint& policy,
                          const ModelEndpoint* judge)
{
    if (dataset.items.empty())
        throw Error("no items");

    auto limits = config.limits;
    limits.max_input_tokens = config.eval.max_input_tokens;
    auto sampling = sampling_of(config.endpoint);
    sampling.temperature = config.eval.temperature;
    const auto system_prompt = config.system_prompt.value_or(default_system_prompt());
    const auto runs = config.eval.runs;

    auto results = std::vector<ItemResult>(dataset.items.size());
    auto tools_used = std::vector<std::vector<std::string>>(dataset.items.size());
    parallel_for(dataset.items.size(), config.eval.concurrency, [&](std::size_t i) {
        const auto& item = dataset.items[i];
        auto& r = results[i];
        r.item_id = item.prompt_id;
        r.subset = item.subset;
        try
        {
            const auto images = load_item_images(dataset, item, config.pixels.eval_pixel_budget,
                                                 config.pixels.per_image_max_pixels);
            auto correct = 0;
            for (int run = 0; run < runs; ++run)
            {
                auto spec = EpisodeSpec {};
                spec.prompt_id = item.prompt_id;
                spec.question = item.question;
                spec.image_set_ref = item.prompt_id;
                spec.system_prompt = system_prompt;
                spec.sampling = sampling;
                spec.seed = detail::splitmix64(config.rollout.seed ^ detail::fnv1a(item.prompt_id)) + run;
                const auto t = run_trajectory(spec, images, policy, limits, static_cast<std::size_t>(run));
                correct += compute_reward(t, item.key, judge, config.reward).r_acc;
                r.tool_calls += t.tool_call_count();
                for (const auto& e: t.tool_events)
                    tools_used[i].emplace_back(tool_name(e.call));
                r.answer = t.final_answer.value_or("");
            }
            r.score = static_cast<double>(correct) / runs;
        }
        catch (const Error& e)
        {
            r.score = 0.0;
            r.error = e.what();
            spdlog::warn("{}: counted as incorrect: {}", item.prompt_id, e.what());
        }
        catch (const std::invalid_argument& e)
        {
            r.score = 0.0;
            r.error = e.what();
            spdlog::warn("{}: counted as incorrect: {}", item.prompt_id, e.what());
        }
    });

    auto report = EvalReport {};
    auto total_calls = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i)
    {
        const auto& r = results[i];
        auto& tally = report.subsets[r.subset];
        tally.correct += r.score;
        ++tally.total;
        report.overall.correct += r.score;
        ++report.overall.total;
        report.failures += r.error.empty() ? 0 : 1;
        total_calls += r.tool_calls;
        for (const auto& name: tools_used[i])
            ++report.tool_mix[name];
    }
    report.mean_tool_calls = total_calls / static_cast<double>(results.size() * static_cast<std::size_t>(runs));
    report.items = std::move(results);
    return report;
}

namespace
{

std::string relative_to(const fs::path& target, const fs::path& dir)
{
    const auto t = fs::weakly_canonical(fs::absolute(target));
    const auto d = fs::weakly_canonical(fs::absolute(dir));
    const auto rel = t.lexically_relative(d);
    return (rel.empty() ? t : rel).generic_string();
}

void write_jsonl(const fs::path& path, const std::vector<json>& lines)
{
    auto out = std::ofstream(path, std::ios::binary | std::ios::trunc);
    for (const auto& line: lines)
        out << line.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    if (!out)
        throw Error(fmt::format("cannot write {}", path.string()));
}

void write_json(const fs::path& path, const json& doc)
{
    auto out = std::ofstream(path, std::ios::binary | std::ios::trunc);
    out << doc.dump(2, ' ', false, json::error_handler_t::replace) << '\n';
    if (!out)
        throw Error(fmt::format("cannot write {}", path.string()));
}

json history_json(const QACandidate& qa)
{
    auto out = json::array();
    for (const auto& h: qa.history)
        out.push_back({ { "round", h.round },
                        { "question", detail::sanitize_utf8(h.question) },
                        { "answer", detail::sanitize_utf8(h.answer) },
                        { "verdict", h.verdict },
                        { "diagnostic", detail::sanitize_utf8(h.diagnostic) } });
    return out;
}

json candidate_json(const QACandidate& qa)
{
    return { { "qa_id", qa.qa_id },
             { "image_paths", qa.image_paths },
             { "question", detail::sanitize_utf8(qa.question) },
             { "answer", detail::sanitize_utf8(qa.answer) },
             { "reasoning_steps", reasoning_steps_to_json(qa.reasoning_steps) },
             { "status", status_label(qa) },
             { "revisions", qa.revisions },
             { "diagnostic", detail::sanitize_utf8(qa.diagnostic) },
             { "history", history_json(qa) },
             { "provenance",
               { { "source_id", qa.provenance.source_id }, { "generation_round", qa.provenance.generation_round } } } };
}

json difficulty_json(const DifficultyRecord& r)
{
    return { { "rollouts", r.rollouts },
             { "correct_count", r.correct_count },
             { "kept", r.kept },
             { "requeued", r.requeued },
             { "excluded", r.excluded } };
}

std::string band_reason(const DifficultyRecord& r, const DifficultyBand& band)
{
    if (r.excluded)
        return fmt::format("rollouts failed after requeue: {}", r.error);
    if (r.correct_count < band.low)
        return fmt::format("too difficult ({}/{})", r.correct_count, r.rollouts);
    return fmt::format("too simple ({}/{})", r.correct_count, r.rollouts);
}

struct PreparedSet
{
    std::string source_id;
    std::vector<std::string> paths;
    std::vector<SourceImage> images;
};

} // namespace

CurationReport run_curation(const RunConfig& config, const SourceManifest& sources,
                            const CurationEndpoints& endpoints, const fs::path& out_dir)
{
    const auto& c = config.curate;
    fs::create_directories(out_dir / "regions");

    auto report = CurationReport {};
    auto stats = json::object();
    auto rejected = std::vector<json> {};
    auto candidates = std::vector<QACandidate> {};
    auto stage = std::string("select");

    try
    {
        const auto selection = select_images(sources.sources, c.min_pixels, sources.base_dir);
        auto params = SegmentationParams {};
        params.min_region_pixels = c.min_region_pixels;
        params.gutter_fraction = c.gutter_fraction;

        stage = "segment";
        auto prepared = std::vector<PreparedSet> {};
        auto stage1 = std::vector<json> {};
        auto posters_segmented = std::size_t { 0 };
        auto posters_rejected = std::size_t { 0 };
        for (const auto& set: selection.sets)
        {
            auto entry = PreparedSet { set.source_id, {}, {} };
            auto line = json { { "source_id", set.source_id }, { "kind", to_string(set.kind) } };
            if (set.kind == SourceKind::NaturalGroup)
            {
                for (std::size_t i = 0; i < set.paths.size(); ++i)
                {
                    entry.paths.push_back(relative_to(sources.base_dir / set.paths[i], out_dir));
                    entry.images.push_back({ entry.paths.back(), set.images[i] });
                }
            }
            else
            {
                auto reason = std::string {};
                auto regions = expand_poster(set, params, &reason);
                if (!regions)
                {
                    ++posters_rejected;
                    rejected.push_back({ { "id", set.source_id }, { "stage", "segment" }, { "reason", reason } });
                    continue;
                }
                ++posters_segmented;
                auto rects = json::array();
                for (std::size_t k = 0; k < regions->regions.size(); ++k)
                {
                    const auto name = fmt::format("regions/{}_r{}.png", set.source_id, k);
                    write_png(out_dir / name, regions->regions[k]);
                    entry.paths.push_back(name);
                    entry.images.push_back({ name, regions->regions[k] });
                    const auto& r = regions->segmentation.regions[k];
                    rects.push_back({ r.x, r.y, r.x + r.width, r.y + r.height });
                }
                line["regions"] = std::move(rects);
            }
            line["images"] = entry.paths;
            stage1.push_back(std::move(line));
            prepared.push_back(std::move(entry));
        }
        write_jsonl(out_dir / "stage1_sets.jsonl", stage1);
        stats["stage1"] = { { "candidates", selection.stats.candidates },
                            { "images_seen", selection.stats.images_seen },
                            { "images_kept", selection.stats.images_kept },
                            { "dropped_low_resolution", selection.stats.dropped_low_resolution },
                            { "unreadable", selection.stats.unreadable },
                            { "sets_selected", selection.stats.sets_kept },
                            { "posters_segmented", posters_segmented },
                            { "posters_rejected", posters_rejected },
                            { "sets_out", prepared.size() } };

        stage = "generate";
        auto generated = std::size_t { 0 };
        for (auto& set: prepared)
        {
            const auto images = std::make_shared<const ImageSet>(
                ImageSet::prepare(std::move(set.images), config.pixels.train_pixel_budget,
                                  config.pixels.per_image_max_pixels));
            stage = "generate";
            auto qa = generate_qa(set.source_id + "-qa", set.paths, images, Provenance { set.source_id, 0 },
                                  endpoints.generator);
            if (qa.status == QAStatus::Rejected)
            {
                rejected.push_back({ { "id", qa.qa_id }, { "stage", "generate" }, { "reason", qa.diagnostic } });
                candidates.push_back(std::move(qa));
                continue;
            }
            ++generated;
            stage = "verify";
            try
            {
                qa = verify_and_revise(std::move(qa), endpoints.verifier, endpoints.reviser, c.max_revisions);
            }
            catch (const PipelineError& e)
            {
                candidates.push_back(e.partial());
                throw;
            }
            if (qa.status == QAStatus::Rejected)
                rejected.push_back({ { "id", qa.qa_id }, { "stage", "verify" }, { "reason", qa.diagnostic } });
            candidates.push_back(std::move(qa));
        }

        auto verified = std::vector<QACandidate> {};
        auto stage2 = std::vector<json> {};
        for (const auto& qa: candidates)
        {
            stage2.push_back(candidate_json(qa));
            if (qa.status == QAStatus::Verified)
                verified.push_back(qa);
        }
        write_jsonl(out_dir / "stage2_candidates.jsonl", stage2);
        stats["stage2"] = { { "sets_in", prepared.size() },
                            { "generated", generated },
                            { "generation_rejected", prepared.size() - generated },
                            { "verified", verified.size() },
                            { "verification_rejected", generated - verified.size() } };

        stage = "calibrate";
        auto calibration = CalibrationParams {};
        calibration.rollouts = c.calibration_rollouts;
        calibration.band = { c.band_low, c.band_high };
        calibration.limits = config.limits;
        calibration.system_prompt = config.system_prompt.value_or(default_system_prompt());
        calibration.sampling = sampling_of(c.base.value_or(config.endpoint));
        calibration.seed = c.seed;
        calibration.concurrency = config.rollout.concurrency;
        const auto records = calibrate_difficulty(verified, endpoints.base, calibration);

        auto in_band = std::vector<QACandidate> {};
        auto stage3 = std::vector<json> {};
        auto difficulty = std::map<std::string, json> {};
        auto excluded = std::size_t { 0 };
        for (std::size_t i = 0; i < records.size(); ++i)
        {
            const auto& r = records[i];
            auto line = difficulty_json(r);
            line["qa_id"] = r.qa_id;
            line["error"] = r.error;
            stage3.push_back(line);
            difficulty[r.qa_id] = difficulty_json(r);
            excluded += r.excluded ? 1 : 0;
            if (r.kept)
                in_band.push_back(verified[i]);
            else
                rejected.push_back(
                    { { "id", r.qa_id }, { "stage", "calibrate" }, { "reason", band_reason(r, calibration.band) } });
        }
        write_jsonl(out_dir / "stage3_difficulty.jsonl", stage3);

        stage = "filter";
        const auto filtered = rule_filter(in_band, c.review_fraction, c.seed);
        for (const auto& d: filtered.dropped)
            rejected.push_back({ { "id", d.qa_id }, { "stage", "filter" }, { "reason", d.reason } });

        auto manifest = std::vector<json> {};
        for (const auto& qa: filtered.kept)
            manifest.push_back({ { "qa_id", qa.qa_id },
                                 { "image_paths", qa.image_paths },
                                 { "question", detail::sanitize_utf8(qa.question) },
                                 { "answer", detail::sanitize_utf8(qa.answer) },
                                 { "reasoning_steps", reasoning_steps_to_json(qa.reasoning_steps) },
                                 { "status", status_label(qa) },
                                 { "revisions", qa.revisions },
                                 { "difficulty", difficulty.at(qa.qa_id) },
                                 { "provenance",
                                   { { "source_id", qa.provenance.source_id },
                                     { "generation_round", qa.provenance.generation_round } } } });
        auto review = std::vector<json> {};
        for (const auto& id: filtered.review)
            review.push_back({ { "qa_id", id } });
        write_jsonl(out_dir / "qa_manifest.jsonl", manifest);
        write_jsonl(out_dir / "review_manifest.jsonl", review);

        stats["stage3"] = { { "calibrated", records.size() },
                            { "kept_by_band", in_band.size() },
                            { "dropped_by_band", records.size() - in_band.size() - excluded },
                            { "excluded", excluded },
                            { "rule_dropped", filtered.dropped.size() },
                            { "kept", filtered.kept.size() },
                            { "review", filtered.review.size() } };
        report.manifest_records = manifest.size();
        report.complete = true;
    }
    catch (const std::exception& e)
    {
        report.failed_stage = stage;
        report.error = e.what();
        spdlog::error("curation stopped in stage '{}': {}", stage, e.what());
        if (!candidates.empty() && !fs::exists(out_dir / "stage2_candidates.jsonl"))
        {
            auto partial = std::vector<json> {};
            for (const auto& qa: candidates)
                partial.push_back(candidate_json(qa));
            write_jsonl(out_dir / "stage2_candidates.partial.jsonl", partial);
        }
    }

    stats["status"] = report.complete ? "complete" : "partial";
    if (!report.complete)
    {
        stats["failed_stage"] = report.failed_stage;
        stats["error"] = report.error;
    }
    write_jsonl(out_dir / "rejected.jsonl", rejected);
    write_json(out_dir / "stats.json", stats);
    report.stats = std::move(stats);
    return report;
}

ScoreSummary rescore_export(std::istream& in, std::ostream& out, const RewardCoefficients& coefficients)
{
    auto records = std::vector<json> {};
    auto line = std::string {};
    for (std::size_t n = 1; std::getline(in, line); ++n)
    {
        if (detail::trim(line).empty())
            continue;
        auto doc = json::parse(line, nullptr, false);
        if (doc.is_discarded())
            throw SchemaError(fmt::format("line {}: not valid JSON", n));
        try
        {
            validate_export_record(doc);
        }
        catch (const SchemaError& e)
        {
            throw SchemaError(fmt::format("line {}: {}", n, e.what()));
        }
        records.push_back(std::move(doc));
    }

    auto groups = std::map<std::pair<std::uint64_t, std::string>, std::vector<std::size_t>> {};
    auto summary = ScoreSummary {};
    auto reward_sum = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i)
    {
        auto& reward = records[i]["reward"];
        const auto total = reward_total(reward["r_acc"].get<int>(), reward["tool_gain"].get<int>(),
                                        reward["r_format"].get<double>(), coefficients);
        reward["a"] = coefficients.a;
        reward["b"] = coefficients.b;
        reward["c"] = coefficients.c;
        reward["total"] = total;
        reward_sum += total;
        groups[{ records[i]["group_id"].get<std::uint64_t>(), records[i]["prompt_id"].get<std::string>() }].push_back(i);
    }

    for (const auto& [_, members]: groups)
    {
        auto rewards = std::vector<double> {};
        auto participate = std::vector<bool> {};
        for (auto i: members)
        {
            rewards.push_back(records[i]["reward"]["total"].get<double>());
            participate.push_back(!records[i]["trajectory_masked"].get<bool>());
        }
        const auto stats = group_advantages(rewards, participate);
        for (std::size_t k = 0; k < members.size(); ++k)
            records[members[k]]["advantage"] = stats.advantages[k];
    }

    for (const auto& record: records)
        out << dump_record(record) << '\n';
    if (!out)
        throw Error("failed to write the re-scored export");

    summary.records = records.size();
    summary.groups = groups.size();
    summary.reward_mean = records.empty() ? 0.0 : reward_sum / static_cast<double>(records.size());
    return summary;
}

} // namespace visagent
