// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <visagent/config.hpp>
#include <visagent/endpoint.hpp>
#include <visagent/manifest.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace visagent
{

struct RolloutSummary
{
    std::size_t prompts = 0;
    std::size_t groups_exported = 0;
    std::size_t records = 0;
    std::size_t failed_prompts = 0;
    std::size_t failed_rollouts = 0;
    double reward_mean = 0.0;
    double valid_fraction = 0.0;
    double mean_tool_calls = 0.0;
    std::vector<std::string> errors;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// run_group, reward, validity, masks and advantages for every prompt, one
/// exported group per prompt (group_id = manifest position). A failing
/// prompt is logged and skipped.
[[nodiscard]] RolloutSummary run_rollout(const RunConfig& config, const PromptManifest& manifest,
                                         const ModelEndpoint& policy, const ModelEndpoint* judge,
                                         std::ostream& export_sink, const std::string& created_at);

struct AccuracyTally
{
    double correct = 0.0;
    std::size_t total = 0;

    /// Percentage, full precision.
    [[nodiscard]] double accuracy() const noexcept;
};

struct ItemResult
{
    std::string item_id;
    std::string subset;
    double score = 0.0; ///< mean correctness over runs
    int tool_calls = 0;
    std::string answer;
    std::string error;
};

struct EvalReport
{
    std::map<std::string, AccuracyTally> subsets;
    AccuracyTally overall;
    std::size_t failures = 0;
    double mean_tool_calls = 0.0;
    std::map<std::string, std::size_t> tool_mix;
    std::vector<ItemResult> items;

    [[nodiscard]] nlohmann::json to_json() const;
    /// Human-readable table, accuracies with one decimal.
    [[nodiscard]] std::string to_text() const;
};

/// One trajectory per item and run at the eval temperature and pixel budget.
/// Per-item failures count as incorrect. Throws Error("no items") for an
/// empty dataset.
[[nodiscard]] EvalReport run_evaluation(const RunConfig& config, const PromptManifest& dataset,
                                        const ModelEndpoint& policy, const ModelEndpoint* judge);

struct CurationEndpoints
{
    const ModelEndpoint& generator;
    const ModelEndpoint& verifier;
    const ModelEndpoint& reviser;
    const ModelEndpoint& base;
};

struct CurationReport
{
    bool complete = false;
    std::string failed_stage;
    std::string error;
    std::size_t manifest_records = 0;
    nlohmann::json stats;
};

/// Runs selection/segmentation, generation/verification/revision and
/// calibration/filtering, writing into `out_dir`:
/// qa_manifest.jsonl, rejected.jsonl, review_manifest.jsonl, stats.json,
/// stage1_sets.jsonl, stage2_candidates.jsonl, stage3_difficulty.jsonl and
/// regions/*.png. A failing stage stops the run; everything written so far
/// stays and stats.json records the failure.
[[nodiscard]] CurationReport run_curation(const RunConfig& config, const SourceManifest& sources,
                                          const CurationEndpoints& endpoints, const std::filesystem::path& out_dir);

struct ScoreSummary
{
    std::size_t records = 0;
    std::size_t groups = 0;
    double reward_mean = 0.0;
};

/// Re-applies `coefficients` to the stored r_acc, tool_gain and r_format of
/// every record and recomputes group advantages. Throws SchemaError for an
/// invalid input record.
[[nodiscard]] ScoreSummary rescore_export(std::istream& in, std::ostream& out,
                                          const RewardCoefficients& coefficients);

} // namespace visagent
