// SPDX-License-Identifier: Apache-2.0
#include <visagent/config.hpp>

#include <visagent/errors.hpp>

#include <fmt/format.h>

#include <cstdlib>
#include <fstream>
#include <set>

namespace visagent
{

using nlohmann::json;

namespace
{

/// Reads keys from one JSON object and rejects any key it was not asked for.
class Reader
{
public:
    Reader(const json& doc, std::string path): _doc(doc), _path(std::move(path))
    {
        if (!_doc.is_object())
            throw ConfigError(fmt::format("{}: expected an object", display()));
    }

    template<typename T>
    void read(const char* key, T& out)
    {
        _seen.insert(key);
        if (!_doc.contains(key))
            return;
        const auto& value = _doc.at(key);
        const auto where = qualified(key);
        if constexpr (std::is_same_v<T, bool>)
        {
            if (!value.is_boolean())
                throw ConfigError(fmt::format("{}: expected a boolean", where));
        }
        else if constexpr (std::is_integral_v<T>)
        {
            if (!value.is_number_integer())
                throw ConfigError(fmt::format("{}: expected an integer", where));
            if constexpr (std::is_unsigned_v<T>)
                if (value.is_number_integer() && !value.is_number_unsigned())
                    throw ConfigError(fmt::format("{}: expected a non-negative integer", where));
        }
        else if constexpr (std::is_floating_point_v<T>)
        {
            if (!value.is_number())
                throw ConfigError(fmt::format("{}: expected a number", where));
        }
        else
        {
            if (!value.is_string())
                throw ConfigError(fmt::format("{}: expected a string", where));
        }
        out = value.get<T>();
    }

    template<typename T, typename Fn>
    void read_object(const char* key, T& out, Fn&& parse)
    {
        _seen.insert(key);
        if (_doc.contains(key))
            parse(Reader(_doc.at(key), qualified(key)), out);
    }

    template<typename T, typename Fn>
    void read_optional(const char* key, std::optional<T>& out, Fn&& parse)
    {
        _seen.insert(key);
        if (!_doc.contains(key) || _doc.at(key).is_null())
            return;
        auto value = T {};
        parse(Reader(_doc.at(key), qualified(key)), value);
        out = std::move(value);
    }

    void read_nullable(const char* key, std::optional<std::string>& out)
    {
        _seen.insert(key);
        if (!_doc.contains(key) || _doc.at(key).is_null())
            return;
        auto value = std::string {};
        read(key, value);
        out = std::move(value);
    }

    void finish() const
    {
        for (const auto& [key, _]: _doc.items())
            if (!_seen.contains(key))
                throw ConfigError(fmt::format("{}: unknown key '{}'", display(), key));
    }

private:
    [[nodiscard]] std::string qualified(const char* key) const
    {
        return _path.empty() ? std::string(key) : _path + "." + key;
    }
    [[nodiscard]] std::string display() const { return _path.empty() ? std::string("config") : _path; }

    const json& _doc;
    std::string _path;
    std::set<std::string, std::less<>> _seen;
};

void parse_endpoint(Reader r, EndpointConfig& e)
{
    r.read("kind", e.kind);
    r.read("base_url", e.base_url);
    r.read("model", e.model);
    r.read("api_key_env", e.api_key_env);
    r.read("temperature", e.temperature);
    r.read("max_new_tokens", e.max_new_tokens);
    r.read("timeout_seconds", e.timeout_seconds);
    r.read("retries", e.retries);
    r.read("backoff_ms", e.backoff_ms);
    r.read("script", e.script);
    r.finish();
}

json endpoint_json(const EndpointConfig& e)
{
    return { { "kind", e.kind },
             { "base_url", e.base_url },
             { "model", e.model },
             { "api_key_env", e.api_key_env },
             { "temperature", e.temperature },
             { "max_new_tokens", e.max_new_tokens },
             { "timeout_seconds", e.timeout_seconds },
             { "retries", e.retries },
             { "backoff_ms", e.backoff_ms },
             { "script", e.script } };
}

json optional_endpoint_json(const std::optional<EndpointConfig>& e)
{
    return e ? endpoint_json(*e) : json();
}

void validate_endpoint(const EndpointConfig& e, const std::string& where)
{
    if (e.kind == "remote")
    {
        if (e.base_url.empty() || e.model.empty())
            throw ConfigError(fmt::format("{}: a remote endpoint needs base_url and model", where));
    }
    else if (e.kind == "scripted")
    {
        if (e.script.empty())
            throw ConfigError(fmt::format("{}: a scripted endpoint needs a script path", where));
    }
    else
        throw ConfigError(fmt::format("{}.kind: expected 'remote' or 'scripted', got '{}'", where, e.kind));
    if (e.max_new_tokens <= 0 || e.timeout_seconds <= 0.0 || e.retries < 0 || e.backoff_ms < 0 || e.temperature < 0.0)
        throw ConfigError(fmt::format("{}: sampling and retry settings must be positive", where));
}

void require_positive(std::int64_t value, const char* key)
{
    if (value <= 0)
        throw ConfigError(fmt::format("{}: must be positive", key));
}

} // namespace

void RunConfig::validate() const
{
    validate_endpoint(endpoint, "endpoint");
    if (judge)
        validate_endpoint(*judge, "judge");
    for (const auto& [name, role]: { std::pair { "curate.generator", &curate.generator },
                                     std::pair { "curate.verifier", &curate.verifier },
                                     std::pair { "curate.reviser", &curate.reviser },
                                     std::pair { "curate.base", &curate.base } })
        if (*role)
            validate_endpoint(**role, name);

    require_positive(limits.max_interactions, "limits.max_tool_interactions");
    require_positive(limits.max_input_tokens, "limits.max_input_tokens");
    require_positive(limits.max_response_tokens, "limits.max_response_tokens");
    require_positive(pixels.train_pixel_budget, "pixels.train_pixel_budget");
    require_positive(pixels.eval_pixel_budget, "pixels.eval_pixel_budget");
    if (pixels.per_image_max_pixels < 0)
        throw ConfigError("pixels.per_image_max_pixels: must be non-negative");
    require_positive(rollout.rollouts_per_prompt, "rollout.rollouts_per_prompt");
    require_positive(rollout.batch_size, "rollout.batch_size");
    require_positive(rollout.concurrency, "rollout.concurrency");
    require_positive(eval.runs, "eval.runs");
    require_positive(eval.max_input_tokens, "eval.max_input_tokens");
    require_positive(eval.concurrency, "eval.concurrency");
    if (eval.temperature < 0.0)
        throw ConfigError("eval.temperature: must be non-negative");
    require_positive(curate.min_pixels, "curate.min_pixels");
    require_positive(curate.min_region_pixels, "curate.min_region_pixels");
    if (!(curate.gutter_fraction > 0.0 && curate.gutter_fraction < 0.5))
        throw ConfigError("curate.gutter_fraction: must be in (0, 0.5)");
    if (curate.max_revisions < 0)
        throw ConfigError("curate.max_revisions: must be non-negative");
    require_positive(curate.calibration_rollouts, "curate.calibration_rollouts");
    if (curate.band_low < 0 || curate.band_low > curate.band_high || curate.band_high > curate.calibration_rollouts)
        throw ConfigError("curate.band_low/band_high: need 0 <= low <= high <= calibration_rollouts");
    if (curate.review_fraction < 0.0 || curate.review_fraction > 1.0)
        throw ConfigError("curate.review_fraction: must be in [0, 1]");
}

json config_to_json(const RunConfig& c)
{
    auto doc = json::object();
    doc["endpoint"] = endpoint_json(c.endpoint);
    doc["judge"] = optional_endpoint_json(c.judge);
    doc["limits"] = { { "max_tool_interactions", c.limits.max_interactions },
                      { "max_input_tokens", c.limits.max_input_tokens },
                      { "max_response_tokens", c.limits.max_response_tokens } };
    doc["reward"] = { { "a", c.reward.a }, { "b", c.reward.b }, { "c", c.reward.c } };
    doc["pixels"] = { { "train_pixel_budget", c.pixels.train_pixel_budget },
                      { "eval_pixel_budget", c.pixels.eval_pixel_budget },
                      { "per_image_max_pixels", c.pixels.per_image_max_pixels } };
    doc["rollout"] = { { "rollouts_per_prompt", c.rollout.rollouts_per_prompt },
                       { "batch_size", c.rollout.batch_size },
                       { "seed", c.rollout.seed },
                       { "concurrency", c.rollout.concurrency } };
    doc["eval"] = { { "temperature", c.eval.temperature },
                    { "runs", c.eval.runs },
                    { "max_input_tokens", c.eval.max_input_tokens },
                    { "concurrency", c.eval.concurrency } };
    doc["curate"] = { { "min_pixels", c.curate.min_pixels },
                      { "min_region_pixels", c.curate.min_region_pixels },
                      { "gutter_fraction", c.curate.gutter_fraction },
                      { "max_revisions", c.curate.max_revisions },
                      { "calibration_rollouts", c.curate.calibration_rollouts },
                      { "band_low", c.curate.band_low },
                      { "band_high", c.curate.band_high },
                      { "review_fraction", c.curate.review_fraction },
                      { "seed", c.curate.seed },
                      { "generator", optional_endpoint_json(c.curate.generator) },
                      { "verifier", optional_endpoint_json(c.curate.verifier) },
                      { "reviser", optional_endpoint_json(c.curate.reviser) },
                      { "base", optional_endpoint_json(c.curate.base) } };
    doc["system_prompt"] = c.system_prompt ? json(*c.system_prompt) : json();
    doc["output_dir"] = c.output_dir;
    return doc;
}

RunConfig config_from_json(const json& doc)
{
    auto c = RunConfig {};
    try
    {
        auto r = Reader(doc, "");
        r.read_object("endpoint", c.endpoint, parse_endpoint);
        r.read_optional("judge", c.judge, parse_endpoint);
        r.read_object("limits", c.limits, [](Reader l, RunLimits& out) {
            l.read("max_tool_interactions", out.max_interactions);
            l.read("max_input_tokens", out.max_input_tokens);
            l.read("max_response_tokens", out.max_response_tokens);
            l.finish();
        });
        r.read_object("reward", c.reward, [](Reader w, RewardCoefficients& out) {
            w.read("a", out.a);
            w.read("b", out.b);
            w.read("c", out.c);
            w.finish();
        });
        r.read_object("pixels", c.pixels, [](Reader p, PixelConfig& out) {
            p.read("train_pixel_budget", out.train_pixel_budget);
            p.read("eval_pixel_budget", out.eval_pixel_budget);
            p.read("per_image_max_pixels", out.per_image_max_pixels);
            p.finish();
        });
        r.read_object("rollout", c.rollout, [](Reader p, RolloutConfig& out) {
            p.read("rollouts_per_prompt", out.rollouts_per_prompt);
            p.read("batch_size", out.batch_size);
            p.read("seed", out.seed);
            p.read("concurrency", out.concurrency);
            p.finish();
        });
        r.read_object("eval", c.eval, [](Reader p, EvalConfig& out) {
            p.read("temperature", out.temperature);
            p.read("runs", out.runs);
            p.read("max_input_tokens", out.max_input_tokens);
            p.read("concurrency", out.concurrency);
            p.finish();
        });
        r.read_object("curate", c.curate, [](Reader p, CurateConfig& out) {
            p.read("min_pixels", out.min_pixels);
            p.read("min_region_pixels", out.min_region_pixels);
            p.read("gutter_fraction", out.gutter_fraction);
            p.read("max_revisions", out.max_revisions);
            p.read("calibration_rollouts", out.calibration_rollouts);
            p.read("band_low", out.band_low);
            p.read("band_high", out.band_high);
            p.read("review_fraction", out.review_fraction);
            p.read("seed", out.seed);
            p.read_optional("generator", out.generator, parse_endpoint);
            p.read_optional("verifier", out.verifier, parse_endpoint);
            p.read_optional("reviser", out.reviser, parse_endpoint);
            p.read_optional("base", out.base, parse_endpoint);
            p.finish();
        });
        r.read_nullable("system_prompt", c.system_prompt);
        r.read("output_dir", c.output_dir);
        r.finish();
    }
    catch (const json::exception& e)
    {
        throw ConfigError(fmt::format("invalid config: {}", e.what()));
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path)
{
    auto in = std::ifstream(path);
    if (!in)
        throw ConfigError(fmt::format("cannot open config {}", path.string()));
    auto doc = json::parse(in, nullptr, false);
    if (doc.is_discarded())
        throw ConfigError(fmt::format("config {} is not valid JSON", path.string()));
    return config_from_json(doc);
}

std::unique_ptr<ModelEndpoint> make_endpoint(const EndpointConfig& config, const std::filesystem::path& base_dir)
{
    if (config.kind == "scripted")
    {
        auto path = std::filesystem::path(config.script);
        if (path.is_relative() && !base_dir.empty())
            path = base_dir / path;
        return std::make_unique<ScriptedEndpoint>(ScriptedEndpoint::from_file(path));
    }
    if (config.kind != "remote")
        throw ConfigError(fmt::format("unknown endpoint kind '{}'", config.kind));

    auto remote = RemoteChatConfig {};
    remote.base_url = config.base_url;
    remote.model = config.model;
    if (!config.api_key_env.empty())
        if (const auto* key = std::getenv(config.api_key_env.c_str()))
            remote.api_key = key;
    remote.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(config.timeout_seconds * 1000.0));
    remote.max_retries = config.retries;
    remote.backoff = std::chrono::milliseconds(config.backoff_ms);
    return std::make_unique<RemoteChatEndpoint>(std::move(remote));
}

SamplingParams sampling_of(const EndpointConfig& config)
{
    return SamplingParams { config.temperature, config.max_new_tokens };
}

} // namespace visagent
