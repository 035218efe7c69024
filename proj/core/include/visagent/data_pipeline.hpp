// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <visagent/agent_runtime.hpp>
#include <visagent/endpoint.hpp>
#include <visagent/errors.hpp>
#include <visagent/segmentation.hpp>
#include <visagent/tool_protocol.hpp>
#include <visagent/visual_tools.hpp>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace visagent
{

// ---- stage 1: image selection -------------------------------------------

enum class SourceKind
{
    NaturalGroup,
    Poster,
};

[[nodiscard]] std::string_view to_string(SourceKind kind) noexcept;
[[nodiscard]] std::optional<SourceKind> parse_source_kind(std::string_view name) noexcept;

struct SourceCandidate
{
    std::string source_id;
    SourceKind kind = SourceKind::NaturalGroup;
    std::vector<std::filesystem::path> paths;
};

struct SelectedSet
{
    std::string source_id;
    SourceKind kind = SourceKind::NaturalGroup;
    std::vector<std::string> paths; ///< as written in the source manifest
    std::vector<cv::Mat> images;
};

struct SelectionStats
{
    std::size_t candidates = 0;
    std::size_t images_seen = 0;
    std::size_t images_kept = 0;
    std::size_t dropped_low_resolution = 0;
    std::size_t unreadable = 0;
    std::size_t sets_kept = 0;

    bool operator==(const SelectionStats&) const = default;
};

struct SelectionResult
{
    std::vector<SelectedSet> sets;
    SelectionStats stats;
};

inline constexpr std::int64_t kDefaultMinPixels = 1'000'000;

/// Drops images below `min_pixels` and unreadable files (logged, never
/// fatal). A natural group survives with at least one kept image; a poster
/// survives when its single image is kept. Relative paths resolve against
/// `base_dir`.
[[nodiscard]] SelectionResult select_images(const std::vector<SourceCandidate>& candidates,
                                            std::int64_t min_pixels = kDefaultMinPixels,
                                            const std::filesystem::path& base_dir = {});

struct RegionSet
{
    std::string source_id;
    std::vector<cv::Mat> regions;
    Segmentation segmentation;
};

/// Splits a selected poster into region images. Returns nullopt (with the
/// reason in `rejection`) for posters the segmenter rejects.
[[nodiscard]] std::optional<RegionSet> expand_poster(const SelectedSet& poster, const SegmentationParams& params,
                                                     std::string* rejection = nullptr);

// ---- stage 2: generation, verification, revision -------------------------

struct ConfidenceRegion
{
    std::int64_t image_index = 0;
    BBox bbox;

    bool operator==(const ConfidenceRegion&) const = default;
};

struct ReasoningStep
{
    std::string step;
    std::optional<ConfidenceRegion> region;

    bool operator==(const ReasoningStep&) const = default;
};

enum class QAStatus
{
    Draft,
    Verified,
    Rejected,
    Revised,
};

struct Provenance
{
    std::string source_id;
    int generation_round = 0; ///< 0 for the original draft, k after k revisions

    bool operator==(const Provenance&) const = default;
};

struct RevisionRecord
{
    int round = 0; ///< 0 is the initial verification
    std::string question;
    std::string answer;
    std::string verdict; ///< "pass" or the failure reason
    std::string diagnostic;
};

struct QACandidate
{
    std::string qa_id;
    std::vector<std::string> image_paths;
    std::shared_ptr<const ImageSet> images;
    std::string question;
    std::string answer;
    std::vector<ReasoningStep> reasoning_steps;
    Provenance provenance;
    QAStatus status = QAStatus::Draft;
    int revisions = 0;      ///< k of Revised(k)
    std::string diagnostic; ///< why a candidate was rejected
    std::vector<RevisionRecord> history;
};

/// "draft", "verified", "rejected" or "revised(k)".
[[nodiscard]] std::string status_label(const QACandidate& qa);

struct QAPayload
{
    std::string question;
    std::string answer;
    std::vector<ReasoningStep> reasoning_steps;
};

/// Parses a generator or reviser reply: a JSON object (optionally fenced or
/// surrounded by prose) with question, answer and non-empty reasoning_steps.
/// Throws SchemaError with a diagnostic on schema failure.
[[nodiscard]] QAPayload parse_qa_payload(std::string_view text);

[[nodiscard]] nlohmann::json reasoning_steps_to_json(const std::vector<ReasoningStep>& steps);

inline constexpr int kGenerationAttempts = 3;

/// Asks the generator for one QA pair over the image set; attempt k is sent
/// with turn_index k. After kGenerationAttempts schema failures the candidate
/// comes back Rejected with the last diagnostic. Endpoint errors propagate.
[[nodiscard]] QACandidate generate_qa(std::string qa_id, std::vector<std::string> image_paths,
                                      std::shared_ptr<const ImageSet> images, const Provenance& provenance,
                                      const ModelEndpoint& generator);

struct Verdict
{
    bool pass = false;
    std::string reason; ///< "answer not unique", "reasoning unsound", ...
    std::string diagnostic;
};

/// Two-axis rubric (answer uniqueness, reasoning soundness). Anything other
/// than a clear pass/pass is a Fail. `round` is sent as the turn index.
[[nodiscard]] Verdict verify_answer(const QACandidate& qa, const ModelEndpoint& verifier, int round = 0);

inline constexpr int kDefaultMaxRevisions = 3;

/// Revise then verify until Pass or max_revisions rounds. Verified input is
/// returned unchanged. Endpoint errors propagate as PipelineError carrying
/// the candidate with its partial history.
[[nodiscard]] QACandidate revise_loop(QACandidate qa, const Verdict& failed, const ModelEndpoint& reviser,
                                      const ModelEndpoint& verifier, int max_revisions = kDefaultMaxRevisions);

/// Verify a Draft, then run the revision loop when it fails.
[[nodiscard]] QACandidate verify_and_revise(QACandidate qa, const ModelEndpoint& verifier,
                                            const ModelEndpoint& reviser, int max_revisions = kDefaultMaxRevisions);

class PipelineError: public Error
{
public:
    PipelineError(const std::string& what, QACandidate partial);

    [[nodiscard]] const QACandidate& partial() const noexcept { return _partial; }

private:
    QACandidate _partial;
};

// ---- stage 3: difficulty calibration and rule filtering ------------------

struct DifficultyBand
{
    int low = 1;
    int high = 4;
};

[[nodiscard]] bool band_keeps(int correct_count, const DifficultyBand& band) noexcept;

struct DifficultyRecord
{
    std::string qa_id;
    int rollouts = 5;
    int correct_count = 0;
    bool kept = false;
    bool requeued = false;
    bool excluded = false; ///< rollouts still failing after the requeue
    std::string error;
};

struct CalibrationParams
{
    int rollouts = 5;
    DifficultyBand band;
    RunLimits limits;
    std::string system_prompt = default_system_prompt();
    SamplingParams sampling;
    std::uint64_t seed = 0;
    int concurrency = 1;
};

/// Answers each verified QA `rollouts` times with the base endpoint and
/// keeps those whose correct count falls inside the band. Correctness is a
/// normalized exact match against the QA answer.
[[nodiscard]] std::vector<DifficultyRecord> calibrate_difficulty(const std::vector<QACandidate>& qas,
                                                                 const ModelEndpoint& base,
                                                                 const CalibrationParams& params);

inline constexpr std::size_t kMinQuestionWords = 8;

struct FilterDrop
{
    std::string qa_id;
    std::string reason;
};

struct FilterResult
{
    std::vector<QACandidate> kept;
    std::vector<FilterDrop> dropped;
    std::vector<std::string> review; ///< qa_ids sampled for human review
};

/// Leak, length, region-range and duplicate rules, then a deterministic
/// review sample of ceil(fraction * kept) items (at least one when any
/// survive).
[[nodiscard]] FilterResult rule_filter(const std::vector<QACandidate>& qas, double review_fraction = 0.1,
                                       std::uint64_t seed = 0);

/// Whole-token, normalized containment of the answer in the question.
[[nodiscard]] bool answer_leaks(std::string_view question, std::string_view answer);

} // namespace visagent
