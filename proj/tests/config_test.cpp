// SPDX-License-Identifier: Apache-2.0
#include <visagent/config.hpp>
#include <visagent/errors.hpp>
#include <visagent/image_io.hpp>
#include <visagent/manifest.hpp>

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace visagent;
using namespace visagent::testing;
using nlohmann::json;

namespace
{

json scripted_doc()
{
    return json { { "endpoint", { { "kind", "scripted" }, { "script", "script.json" } } } };
}

std::string error_of(const json& doc)
{
    try
    {
        (void)config_from_json(doc);
    }
    catch (const ConfigError& e)
    {
        return e.what();
    }
    return {};
}

PromptManifest parse(std::string_view text)
{
    auto in = std::istringstream(std::string(text));
    return parse_prompt_manifest(in, "/data");
}

std::string manifest_error(std::string_view text)
{
    try
    {
        (void)parse(text);
    }
    catch (const ManifestError& e)
    {
        return e.what();
    }
    return {};
}

} // namespace

TEST(Config, Defaults)
{
    const auto c = config_from_json(scripted_doc());
    EXPECT_EQ(c.limits.max_interactions, 5);
    EXPECT_EQ(c.limits.max_input_tokens, 10'480);
    EXPECT_EQ(c.limits.max_response_tokens, 20'480);
    EXPECT_EQ(c.pixels.train_pixel_budget, 4'000'000);
    EXPECT_EQ(c.pixels.eval_pixel_budget, 12'845'056);
    EXPECT_EQ(c.rollout.rollouts_per_prompt, 8);
    EXPECT_EQ(c.rollout.batch_size, 256);
    EXPECT_EQ(c.eval.temperature, 0.0);
    EXPECT_EQ(c.reward, (RewardCoefficients { 1.0, 0.5, 0.1 }));
    EXPECT_EQ(c.curate.min_pixels, 1'000'000);
    EXPECT_EQ(c.curate.min_region_pixels, 250'000);
    EXPECT_EQ(c.curate.max_revisions, 3);
    EXPECT_EQ(c.curate.calibration_rollouts, 5);
    EXPECT_EQ(c.curate.band_low, 1);
    EXPECT_EQ(c.curate.band_high, 4);
    EXPECT_EQ(c.curate.review_fraction, 0.1);
    EXPECT_FALSE(c.judge);
    EXPECT_FALSE(c.system_prompt);
}

TEST(Config, RoundTrip)
{
    auto c = config_from_json(scripted_doc());
    auto judge = EndpointConfig {};
    judge.kind = "remote";
    judge.base_url = "http://judge:8000/v1";
    judge.model = "judge-model";
    c.judge = judge;
    c.limits.max_interactions = 3;
    c.reward = { 1.0, 0.25, 0.2 };
    c.rollout.seed = 123456789012345ULL;
    c.curate.verifier = c.endpoint;
    c.system_prompt = "be brief";
    const auto doc = config_to_json(c);
    EXPECT_EQ(config_from_json(doc), c);
    EXPECT_EQ(config_to_json(config_from_json(doc)), doc);
}

TEST(Config, Errors)
{
    auto doc = scripted_doc();
    doc["limits"] = { { "max_turns", 3 } };
    EXPECT_EQ(error_of(doc), "limits: unknown key 'max_turns'");

    doc = scripted_doc();
    doc["rollout"] = { { "batch_size", "big" } };
    EXPECT_EQ(error_of(doc), "rollout.batch_size: expected an integer");

    doc = scripted_doc();
    doc["limits"] = { { "max_tool_interactions", 0 } };
    EXPECT_EQ(error_of(doc), "limits.max_tool_interactions: must be positive");

    doc = scripted_doc();
    doc["curate"] = { { "band_low", 4 }, { "band_high", 2 } };
    EXPECT_NE(error_of(doc).find("curate.band_low"), std::string::npos);

    EXPECT_EQ(error_of(json::object()), "endpoint: a scripted endpoint needs a script path");
    EXPECT_EQ(error_of(json { { "endpoint", { { "kind", "remote" } } } }),
              "endpoint: a remote endpoint needs base_url and model");
    EXPECT_NE(error_of(json { { "endpoint", { { "kind", "grpc" } } } }).find("endpoint.kind"), std::string::npos);
    EXPECT_NE(error_of(json { { "surprise", 1 } }).find("unknown key 'surprise'"), std::string::npos);
    EXPECT_FALSE(error_of(json::array()).empty());
}

TEST(Config, LoadFromFileAndEndpoint)
{
    const auto dir = TempDir();
    write_text(dir / "script.json", R"(["<think>t</think><answer>A</answer>"])");
    write_text(dir / "config.json", scripted_doc().dump());
    const auto c = load_config(dir / "config.json");
    const auto endpoint = make_endpoint(c.endpoint, dir.path());
    EXPECT_NE(endpoint, nullptr);

    write_text(dir / "broken.json", "{");
    EXPECT_THROW((void)load_config(dir / "broken.json"), ConfigError);
    EXPECT_THROW((void)load_config(dir / "absent.json"), ConfigError);
    EXPECT_THROW((void)make_endpoint(c.endpoint, dir / "elsewhere"), ConfigError);

    auto tuned = EndpointConfig {};
    tuned.temperature = 0.7;
    tuned.max_new_tokens = 99;
    const auto sampling = sampling_of(tuned);
    EXPECT_EQ(sampling.temperature, 0.7);
    EXPECT_EQ(sampling.max_new_tokens, 99);
}

TEST(PromptManifest, ParsesAllLineShapes)
{
    const auto m = parse(R"({"prompt_id": "p1", "images": ["a.png"], "question": "q?", "gold": "B", "answer_type": "choice", "options": ["A. x", "B. y"], "subset": "poster"}

{"item_id": "e1", "images": ["/abs/b.png"], "question": "q2", "gold": "cat"}
{"qa_id": "c1", "image_paths": ["c.png"], "question": "q3", "answer": "dog", "reasoning_steps": [], "status": "verified", "revisions": 0, "difficulty": {}, "provenance": {}})");
    ASSERT_EQ(m.items.size(), 3u);
    EXPECT_EQ(m.items[0].key.kind, AnswerKind::MultipleChoice);
    EXPECT_EQ(m.items[0].subset, "poster");
    EXPECT_EQ(m.items[1].prompt_id, "e1");
    EXPECT_EQ(m.items[1].subset, "all");
    EXPECT_EQ(m.items[2].key.gold, "dog");
    EXPECT_EQ(m.resolve("a.png"), std::filesystem::path("/data/a.png"));
    EXPECT_EQ(m.resolve("/abs/b.png"), std::filesystem::path("/abs/b.png"));
}

TEST(PromptManifest, Errors)
{
    EXPECT_EQ(manifest_error("not json"), "manifest line 1: not a JSON object");
    EXPECT_EQ(manifest_error(R"({"prompt_id": "p", "images": ["a"], "question": "q", "gold": "g", "extra": 1})"),
              "manifest line 1: unknown key 'extra'");
    EXPECT_EQ(manifest_error(R"({"prompt_id": "p", "images": ["a"], "question": "q", "gold": "g"}
{"prompt_id": "p", "images": ["a"], "question": "q", "gold": "g"})"),
              "manifest line 2: duplicate id 'p'");
    EXPECT_EQ(manifest_error(R"({"prompt_id": "p", "images": [], "question": "q", "gold": "g"})"),
              "manifest line 1: an item needs at least one image");
    EXPECT_NE(manifest_error(R"({"prompt_id": "p", "images": ["a"], "question": "q"})").find("missing"), std::string::npos);
    EXPECT_NE(manifest_error(R"({"prompt_id": "p", "images": ["a"], "question": "q", "gold": "D", "answer_type": "choice", "options": ["A. x", "B. y"]})")
                  .find("not one of the options"),
              std::string::npos);
    EXPECT_NE(manifest_error(R"({"prompt_id": "p", "images": ["a"], "question": "q", "gold": "g", "answer_type": "fuzzy"})")
                  .find("answer_type"),
              std::string::npos);
}

TEST(PromptManifest, LoadsImagesUnderBudget)
{
    const auto dir = TempDir();
    write_png(dir / "a.png", noise_image(2000, 2000, 1));
    write_text(dir / "m.jsonl", R"({"prompt_id": "p", "images": ["a.png"], "question": "q", "gold": "g"})");
    const auto m = load_prompt_manifest(dir / "m.jsonl");
    EXPECT_EQ(m.base_dir, dir.path());
    const auto set = load_item_images(m, m.items[0], 1'000'000);
    EXPECT_LE(set.total_served_pixels(), 1'000'000);
    EXPECT_EQ(set.at(0).original_width, 2000);
    EXPECT_EQ(set.at(0).original_height, 2000);
    EXPECT_THROW((void)load_prompt_manifest(dir / "nope.jsonl"), ManifestError);
}

TEST(SourceManifest, Parses)
{
    auto in = std::istringstream(R"({"source_id": "g", "kind": "natural", "images": ["a.png", "b.png"]}
{"source_id": "p", "kind": "poster", "images": ["p.png"]})");
    const auto m = parse_source_manifest(in, "/src");
    ASSERT_EQ(m.sources.size(), 2u);
    EXPECT_EQ(m.sources[0].kind, SourceKind::NaturalGroup);
    EXPECT_EQ(m.sources[1].kind, SourceKind::Poster);
    EXPECT_EQ(m.sources[0].paths.size(), 2u);

    auto bad = std::istringstream(R"({"source_id": "g", "kind": "video", "images": ["a.png"]})");
    EXPECT_THROW((void)parse_source_manifest(bad), ManifestError);
    auto extra = std::istringstream(R"({"source_id": "g", "kind": "natural", "images": ["a.png"], "x": 1})");
    EXPECT_THROW((void)parse_source_manifest(extra), ManifestError);
}
