// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <visagent/agent_runtime.hpp>
#include <visagent/reward.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace visagent
{

inline constexpr int kExportSchemaVersion = 1;

/// One prompt's rollout group after scoring. Trajectories must carry a reward.
struct MaskedGroup
{
    std::string prompt_id;
    std::uint64_t group_id = 0;
    std::vector<Trajectory> trajectories;
    std::vector<double> advantages;
    std::vector<bool> trajectory_mask; ///< true = participates in the update
    double mean = 0.0;
    double std = 0.0;
    bool degenerate = false;
};

/// Masks every non-Valid member and computes group advantages from the
/// stored rewards. Throws std::invalid_argument for an empty group or a
/// member without a reward.
[[nodiscard]] MaskedGroup make_masked_group(std::string prompt_id, std::uint64_t group_id,
                                            std::vector<Trajectory> trajectories);

[[nodiscard]] nlohmann::json tool_call_to_json(const ToolCall& call);
[[nodiscard]] nlohmann::json reward_to_json(const RewardBreakdown& reward);

/// Export record for one member. `created_at` is the only wall-clock field.
[[nodiscard]] nlohmann::json export_record(const MaskedGroup& group, std::size_t member,
                                           const std::string& created_at);

/// Throws SchemaError naming the first offending field.
void validate_export_record(const nlohmann::json& record);

/// Builds and validates every record before writing any; returns the record
/// count. Throws std::invalid_argument for an empty group, SchemaError on
/// validation failure and Error when the sink fails.
std::size_t export_group(const MaskedGroup& group, std::ostream& sink, const std::string& created_at);

/// Serializes one record as a single line (no trailing newline).
[[nodiscard]] std::string dump_record(const nlohmann::json& record);

struct ExportCheckReport
{
    std::size_t records = 0;
    std::vector<std::string> errors; ///< "line N: message"

    [[nodiscard]] bool ok() const noexcept { return errors.empty(); }
};

[[nodiscard]] ExportCheckReport check_export_stream(std::istream& in);

/// Current UTC time as "YYYY-MM-DDTHH:MM:SSZ".
[[nodiscard]] std::string utc_timestamp();

} // namespace visagent
