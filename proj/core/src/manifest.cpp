// SPDX-License-Identifier: Apache-2.0
#include <visagent/manifest.hpp>

#include <visagent/errors.hpp>
#include <visagent/image_io.hpp>

#include "text_util.hpp"

#include <fmt/format.h>

#include <fstream>
#include <set>

namespace visagent
{

using nlohmann::json;

namespace
{

// Curated QA lines carry bookkeeping that rollouts ignore.
const std::set<std::string, std::less<>> kPromptKeys = {
    "prompt_id", "item_id", "qa_id",      "images",          "image_paths", "question",   "gold",
    "answer",    "answer_type", "options", "subset",         "reasoning_steps", "status", "revisions",
    "difficulty", "provenance",
};

[[noreturn]] void manifest_fail(std::size_t line, std::string_view what)
{
    throw ManifestError(fmt::format("manifest line {}: {}", line, what));
}

std::string string_field(const json& doc, std::size_t line, std::initializer_list<const char*> names)
{
    for (const auto* name: names)
        if (doc.contains(name))
        {
            if (!doc.at(name).is_string() || detail::trim(doc.at(name).get<std::string>()).empty())
                manifest_fail(line, fmt::format("'{}' must be a non-empty string", name));
            return doc.at(name).get<std::string>();
        }
    manifest_fail(line, fmt::format("missing '{}'", *names.begin()));
}

std::vector<std::string> string_list(const json& doc, std::size_t line, std::initializer_list<const char*> names,
                                     bool required)
{
    for (const auto* name: names)
        if (doc.contains(name))
        {
            const auto& list = doc.at(name);
            if (!list.is_array())
                manifest_fail(line, fmt::format("'{}' must be an array of strings", name));
            auto out = std::vector<std::string> {};
            for (const auto& v: list)
            {
                if (!v.is_string())
                    manifest_fail(line, fmt::format("'{}' must be an array of strings", name));
                out.push_back(v.get<std::string>());
            }
            return out;
        }
    if (required)
        manifest_fail(line, fmt::format("missing '{}'", *names.begin()));
    return {};
}

template<typename Fn>
void for_each_line(std::istream& in, Fn&& fn)
{
    auto text = std::string {};
    for (std::size_t n = 1; std::getline(in, text); ++n)
    {
        if (detail::trim(text).empty())
            continue;
        auto doc = json::parse(text, nullptr, false);
        if (doc.is_discarded() || !doc.is_object())
            manifest_fail(n, "not a JSON object");
        fn(doc, n);
    }
}

} // namespace

std::filesystem::path PromptManifest::resolve(const std::string& image) const
{
    const auto path = std::filesystem::path(image);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

PromptManifest parse_prompt_manifest(std::istream& in, const std::filesystem::path& base_dir)
{
    auto manifest = PromptManifest { base_dir, {} };
    auto ids = std::set<std::string> {};
    for_each_line(in, [&](const json& doc, std::size_t n) {
        for (const auto& [key, _]: doc.items())
            if (!kPromptKeys.contains(key))
                manifest_fail(n, fmt::format("unknown key '{}'", key));

        auto item = PromptItem {};
        item.prompt_id = string_field(doc, n, { "prompt_id", "item_id", "qa_id" });
        if (!ids.insert(item.prompt_id).second)
            manifest_fail(n, fmt::format("duplicate id '{}'", item.prompt_id));
        item.images = string_list(doc, n, { "images", "image_paths" }, true);
        if (item.images.empty())
            manifest_fail(n, "an item needs at least one image");
        item.question = string_field(doc, n, { "question" });
        item.key.gold = string_field(doc, n, { "gold", "answer" });
        item.key.options = string_list(doc, n, { "options" }, false);
        if (doc.contains("subset"))
            item.subset = string_field(doc, n, { "subset" });

        const auto type = doc.contains("answer_type") ? string_field(doc, n, { "answer_type" }) : std::string("exact");
        const auto kind = parse_answer_kind(type);
        if (!kind)
            manifest_fail(n, fmt::format("answer_type must be choice, exact or judge, got '{}'", type));
        item.key.kind = *kind;
        if (item.key.kind == AnswerKind::MultipleChoice)
        {
            const auto letter = leading_option_letter(item.key.gold, item.key.options);
            if (!letter)
                manifest_fail(n, fmt::format("gold '{}' is not one of the options", item.key.gold));
        }
        manifest.items.push_back(std::move(item));
    });
    return manifest;
}

PromptManifest load_prompt_manifest(const std::filesystem::path& path)
{
    auto in = std::ifstream(path);
    if (!in)
        throw ManifestError(fmt::format("cannot open manifest {}", path.string()));
    try
    {
        return parse_prompt_manifest(in, path.parent_path());
    }
    catch (const ManifestError& e)
    {
        throw ManifestError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

ImageSet load_item_images(const PromptManifest& manifest, const PromptItem& item, std::int64_t pixel_budget,
                          std::int64_t per_image_max_pixels)
{
    auto raw = std::vector<SourceImage> {};
    for (const auto& image: item.images)
        raw.push_back({ image, load_image(manifest.resolve(image)) });
    return ImageSet::prepare(std::move(raw), pixel_budget, per_image_max_pixels);
}

SourceManifest parse_source_manifest(std::istream& in, const std::filesystem::path& base_dir)
{
    auto manifest = SourceManifest { base_dir, {} };
    auto ids = std::set<std::string> {};
    for_each_line(in, [&](const json& doc, std::size_t n) {
        for (const auto& [key, _]: doc.items())
            if (key != "source_id" && key != "kind" && key != "images")
                manifest_fail(n, fmt::format("unknown key '{}'", key));
        auto source = SourceCandidate {};
        source.source_id = string_field(doc, n, { "source_id" });
        if (!ids.insert(source.source_id).second)
            manifest_fail(n, fmt::format("duplicate id '{}'", source.source_id));
        const auto kind_name = string_field(doc, n, { "kind" });
        const auto kind = parse_source_kind(kind_name);
        if (!kind)
            manifest_fail(n, fmt::format("kind must be natural or poster, got '{}'", kind_name));
        source.kind = *kind;
        for (const auto& p: string_list(doc, n, { "images" }, true))
            source.paths.emplace_back(p);
        if (source.paths.empty())
            manifest_fail(n, "a source needs at least one image");
        if (source.kind == SourceKind::Poster && source.paths.size() != 1)
            manifest_fail(n, "a poster source has exactly one image");
        manifest.sources.push_back(std::move(source));
    });
    return manifest;
}

SourceManifest load_source_manifest(const std::filesystem::path& path)
{
    auto in = std::ifstream(path);
    if (!in)
        throw ManifestError(fmt::format("cannot open manifest {}", path.string()));
    try
    {
        return parse_source_manifest(in, path.parent_path());
    }
    catch (const ManifestError& e)
    {
        throw ManifestError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

} // namespace visagent
