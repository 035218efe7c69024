// SPDX-License-Identifier: Apache-2.0
// visagent command-line tool: rollout, evaluate, curate, score, export-check.
#include <visagent/config.hpp>
#include <visagent/errors.hpp>
#include <visagent/export.hpp>
#include <visagent/harness.hpp>
#include <visagent/manifest.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace visagent;

namespace
{

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Common
{
    std::string config_path;
    std::string log_level = "info";
};

struct Loaded
{
    RunConfig config;
    fs::path base_dir; ///< directory of the config file, for script paths
};

Loaded load(const Common& common)
{
    if (common.config_path.empty())
        return { RunConfig {}, fs::current_path() };
    const auto path = fs::path(common.config_path);
    return { load_config(path), fs::absolute(path).parent_path() };
}

std::unique_ptr<ModelEndpoint> make_judge(const Loaded& loaded)
{
    if (!loaded.config.judge)
        return nullptr;
    return make_endpoint(*loaded.config.judge, loaded.base_dir);
}

std::ofstream open_output(const fs::path& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    auto out = std::ofstream(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(fmt::format("cannot write {}", path.string()));
    return out;
}

int cmd_rollout(const Common& common, const std::string& manifest_path, std::string out_path,
                const std::string& timestamp)
{
    const auto loaded = load(common);
    const auto manifest = load_prompt_manifest(manifest_path);
    const auto policy = make_endpoint(loaded.config.endpoint, loaded.base_dir);
    const auto judge = make_judge(loaded);
    if (out_path.empty())
        out_path = (fs::path(loaded.config.output_dir) / "rollout.jsonl").string();

    auto out = open_output(out_path);
    const auto summary = run_rollout(loaded.config, manifest, *policy, judge.get(), out,
                                     timestamp.empty() ? utc_timestamp() : timestamp);
    out.close();
    std::cout << summary.to_json().dump(2) << '\n';
    return summary.groups_exported == 0 && summary.prompts > 0 ? kExitFailure : 0;
}

int cmd_evaluate(const Common& common, const std::string& dataset_path, const std::string& report_path)
{
    const auto loaded = load(common);
    const auto dataset = load_prompt_manifest(dataset_path);
    const auto policy = make_endpoint(loaded.config.endpoint, loaded.base_dir);
    const auto judge = make_judge(loaded);

    const auto report = run_evaluation(loaded.config, dataset, *policy, judge.get());
    std::cout << report.to_text();
    if (!report_path.empty())
    {
        auto out = open_output(report_path);
        out << report.to_json().dump(2) << '\n';
    }
    return 0;
}

int cmd_curate(const Common& common, const std::string& sources_path, std::string out_dir)
{
    const auto loaded = load(common);
    const auto& c = loaded.config.curate;
    const auto sources = load_source_manifest(sources_path);
    const auto role = [&](const std::optional<EndpointConfig>& cfg) {
        return make_endpoint(cfg.value_or(loaded.config.endpoint), loaded.base_dir);
    };
    const auto generator = role(c.generator);
    const auto verifier = role(c.verifier);
    const auto reviser = role(c.reviser);
    const auto base = role(c.base);
    if (out_dir.empty())
        out_dir = (fs::path(loaded.config.output_dir) / "curate").string();

    const auto report =
        run_curation(loaded.config, sources, CurationEndpoints { *generator, *verifier, *reviser, *base }, out_dir);
    std::cout << report.stats.dump(2) << '\n';
    return report.complete ? 0 : kExitFailure;
}

int cmd_score(const Common& common, const std::string& input, const std::string& output,
              const std::optional<double>& a, const std::optional<double>& b, const std::optional<double>& c)
{
    const auto loaded = load(common);
    auto coefficients = loaded.config.reward;
    coefficients.a = a.value_or(coefficients.a);
    coefficients.b = b.value_or(coefficients.b);
    coefficients.c = c.value_or(coefficients.c);

    auto in = std::ifstream(input, std::ios::binary);
    if (!in)
        throw Error(fmt::format("cannot open {}", input));
    auto out = open_output(output);
    const auto summary = rescore_export(in, out, coefficients);
    std::cout << fmt::format("{} records in {} groups, reward mean {:.4f}\n", summary.records, summary.groups,
                             summary.reward_mean);
    return 0;
}

int cmd_export_check(const std::vector<std::string>& files)
{
    auto status = 0;
    for (const auto& file: files)
    {
        auto in = std::ifstream(file, std::ios::binary);
        if (!in)
        {
            std::cout << fmt::format("{}: cannot open\n", file);
            status = kExitFailure;
            continue;
        }
        const auto report = check_export_stream(in);
        if (report.ok())
        {
            std::cout << fmt::format("{}: ok, {} records\n", file, report.records);
            continue;
        }
        status = kExitFailure;
        for (const auto& e: report.errors)
            std::cout << fmt::format("{}: {}\n", file, e);
    }
    return status;
}

} // namespace

int main(int argc, char** argv)
{
    auto app = CLI::App { "Multi-image agentic visual reasoning harness" };
    app.require_subcommand(1);

    auto common = Common {};
    app.add_option("-c,--config", common.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--log-level", common.log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({ "trace", "debug", "info", "warn", "error", "off" }));

    auto manifest = std::string {};
    auto out = std::string {};
    auto timestamp = std::string {};
    auto* rollout = app.add_subcommand("rollout", "Roll out prompt groups and export scored trajectories");
    rollout->add_option("-m,--manifest", manifest, "prompt manifest (JSONL)")->required()->check(CLI::ExistingFile);
    rollout->add_option("-o,--out", out, "export file (default <output_dir>/rollout.jsonl)");
    rollout->add_option("--timestamp", timestamp, "created_at value for every record (default: now, UTC)");

    auto dataset = std::string {};
    auto report = std::string {};
    auto* evaluate = app.add_subcommand("evaluate", "Score a dataset and report accuracy per subset");
    evaluate->add_option("-d,--dataset", dataset, "evaluation items (JSONL)")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--report", report, "also write the full report as JSON");

    auto sources = std::string {};
    auto curate_out = std::string {};
    auto* curate = app.add_subcommand("curate", "Build a multi-image QA manifest from source images");
    curate->add_option("-s,--sources", sources, "source manifest (JSONL)")->required()->check(CLI::ExistingFile);
    curate->add_option("-o,--out", curate_out, "output directory (default <output_dir>/curate)");

    auto score_in = std::string {};
    auto score_out = std::string {};
    auto a = std::optional<double> {};
    auto b = std::optional<double> {};
    auto c = std::optional<double> {};
    auto* score = app.add_subcommand("score", "Re-score an existing export with new reward coefficients");
    score->add_option("input", score_in, "export file")->required()->check(CLI::ExistingFile);
    score->add_option("-o,--out", score_out, "re-scored export")->required();
    score->add_option("--a", a, "accuracy weight");
    score->add_option("--b", b, "tool-gain weight");
    score->add_option("--c", c, "format weight");

    auto check_files = std::vector<std::string> {};
    auto* check = app.add_subcommand("export-check", "Validate export files against the record schema");
    check->add_option("files", check_files, "export files")->required();

    auto* show = app.add_subcommand("show-config", "Print the effective configuration with every key");

    CLI11_PARSE(app, argc, argv);

    spdlog::set_default_logger(spdlog::stderr_color_mt("visagent"));
    spdlog::set_level(spdlog::level::from_str(common.log_level));

    try
    {
        if (*rollout)
            return cmd_rollout(common, manifest, out, timestamp);
        if (*evaluate)
            return cmd_evaluate(common, dataset, report);
        if (*curate)
            return cmd_curate(common, sources, curate_out);
        if (*score)
            return cmd_score(common, score_in, score_out, a, b, c);
        if (*check)
            return cmd_export_check(check_files);
        if (*show)
        {
            std::cout << config_to_json(load(common).config).dump(2) << '\n';
            return 0;
        }
    }
    catch (const ConfigError& e)
    {
        spdlog::error("config: {}", e.what());
        return kExitUsage;
    }
    catch (const ManifestError& e)
    {
        spdlog::error("{}", e.what());
        return kExitUsage;
    }
    catch (const std::exception& e)
    {
        spdlog::error("{}", e.what());
        return kExitFailure;
    }
    return kExitUsage;
}
