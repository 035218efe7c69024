// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <visagent/data_pipeline.hpp>
#include <visagent/reward.hpp>
#include <visagent/visual_tools.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace visagent
{

/// One prompt of a rollout manifest or one item of an evaluation dataset.
struct PromptItem
{
    std::string prompt_id;
    std::vector<std::string> images; ///< as written; resolved against the manifest directory
    std::string question;
    AnswerKey key;
    std::string subset = "all";
};

struct PromptManifest
{
    std::filesystem::path base_dir;
    std::vector<PromptItem> items;

    [[nodiscard]] std::filesystem::path resolve(const std::string& image) const;
};

/// Line-delimited JSON. Accepts rollout prompts
/// {prompt_id, images, question, gold, answer_type, options, subset},
/// evaluation items (item_id instead of prompt_id) and curated QA lines
/// (qa_id, image_paths, answer). Unknown keys, missing fields, duplicate ids
/// and a multiple-choice gold outside its options throw ManifestError.
[[nodiscard]] PromptManifest parse_prompt_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
[[nodiscard]] PromptManifest load_prompt_manifest(const std::filesystem::path& path);

/// Loads and budgets the item's images.
[[nodiscard]] ImageSet load_item_images(const PromptManifest& manifest, const PromptItem& item,
                                        std::int64_t pixel_budget, std::int64_t per_image_max_pixels = 0);

/// Line-delimited {source_id, kind: "natural"|"poster", images: [...]}.
struct SourceManifest
{
    std::filesystem::path base_dir;
    std::vector<SourceCandidate> sources;
};

[[nodiscard]] SourceManifest parse_source_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
[[nodiscard]] SourceManifest load_source_manifest(const std::filesystem::path& path);

} // namespace visagent
