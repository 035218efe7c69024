// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <visagent/agent_runtime.hpp>
#include <visagent/endpoint.hpp>
#include <visagent/visual_tools.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace visagent
{

struct EndpointConfig
{
    std::string kind = "scripted"; ///< "remote" or "scripted"
    std::string base_url;
    std::string model;
    std::string api_key_env = "VISAGENT_API_KEY";
    double temperature = 1.0;
    int max_new_tokens = 4096;
    double timeout_seconds = 120.0;
    int retries = 3;
    int backoff_ms = 500;
    std::string script; ///< scripted: path to the script file

    bool operator==(const EndpointConfig&) const = default;
};

struct PixelConfig
{
    std::int64_t train_pixel_budget = kDefaultTrainPixelBudget;
    std::int64_t eval_pixel_budget = kDefaultEvalPixelBudget;
    std::int64_t per_image_max_pixels = 0; ///< 0: same as the total budget

    bool operator==(const PixelConfig&) const = default;
};

struct RolloutConfig
{
    int rollouts_per_prompt = 8;
    int batch_size = 256;
    std::uint64_t seed = 0;
    int concurrency = 1;

    bool operator==(const RolloutConfig&) const = default;
};

struct EvalConfig
{
    double temperature = 0.0;
    int runs = 1;
    std::int64_t max_input_tokens = 32'768;
    int concurrency = 1;

    bool operator==(const EvalConfig&) const = default;
};

struct CurateConfig
{
    std::int64_t min_pixels = 1'000'000;
    std::int64_t min_region_pixels = 250'000;
    double gutter_fraction = 0.02;
    int max_revisions = 3;
    int calibration_rollouts = 5;
    int band_low = 1;
    int band_high = 4;
    double review_fraction = 0.1;
    std::uint64_t seed = 0;
    std::optional<EndpointConfig> generator; ///< unset roles use the main endpoint
    std::optional<EndpointConfig> verifier;
    std::optional<EndpointConfig> reviser;
    std::optional<EndpointConfig> base;

    bool operator==(const CurateConfig&) const = default;
};

struct RunConfig
{
    EndpointConfig endpoint;
    std::optional<EndpointConfig> judge;
    RunLimits limits;
    RewardCoefficients reward;
    PixelConfig pixels;
    RolloutConfig rollout;
    EvalConfig eval;
    CurateConfig curate;
    std::optional<std::string> system_prompt;
    std::string output_dir = "out";

    /// Throws ConfigError naming the offending key.
    void validate() const;

    bool operator==(const RunConfig&) const = default;
};

/// Every key is written, defaults included.
[[nodiscard]] nlohmann::json config_to_json(const RunConfig& config);

/// Missing keys take defaults; unknown keys and type mismatches throw
/// ConfigError. The result is validated.
[[nodiscard]] RunConfig config_from_json(const nlohmann::json& doc);

[[nodiscard]] RunConfig load_config(const std::filesystem::path& path);

/// Builds the endpoint. Relative script paths resolve against `base_dir`;
/// the API key is read from the configured environment variable.
[[nodiscard]] std::unique_ptr<ModelEndpoint> make_endpoint(const EndpointConfig& config,
                                                           const std::filesystem::path& base_dir = {});

[[nodiscard]] SamplingParams sampling_of(const EndpointConfig& config);

} // namespace visagent
