// SPDX-License-Identifier: Apache-2.0
#include <visagent/data_pipeline.hpp>

#include <visagent/errors.hpp>
#include <visagent/image_io.hpp>
#include <visagent/reward.hpp>

#include "text_util.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

namespace visagent
{

using nlohmann::json;

std::string_view to_string(SourceKind kind) noexcept
{
    return kind == SourceKind::Poster ? "poster" : "natural";
}

std::optional<SourceKind> parse_source_kind(std::string_view name) noexcept
{
    if (name == "poster")
        return SourceKind::Poster;
    if (name == "natural")
        return SourceKind::NaturalGroup;
    return std::nullopt;
}

SelectionResult select_images(const std::vector<SourceCandidate>& candidates, std::int64_t min_pixels,
                              const std::filesystem::path& base_dir)
{
    auto out = SelectionResult {};
    for (const auto& candidate: candidates)
    {
        ++out.stats.candidates;
        auto set = SelectedSet { candidate.source_id, candidate.kind, {}, {} };
        for (const auto& path: candidate.paths)
        {
            ++out.stats.images_seen;
            const auto resolved = path.is_absolute() || base_dir.empty() ? path : base_dir / path;
            auto image = cv::Mat {};
            try
            {
                image = load_image(resolved);
            }
            catch (const ImageError& e)
            {
                spdlog::warn("skipping {} in source '{}': {}", path.string(), candidate.source_id, e.what());
                ++out.stats.unreadable;
                continue;
            }
            if (pixel_count(image) < min_pixels)
            {
                ++out.stats.dropped_low_resolution;
                continue;
            }
            ++out.stats.images_kept;
            set.paths.push_back(path.string());
            set.images.push_back(std::move(image));
        }
        const auto keep = candidate.kind == SourceKind::Poster ? set.images.size() == 1 : !set.images.empty();
        if (keep)
        {
            ++out.stats.sets_kept;
            out.sets.push_back(std::move(set));
        }
    }
    return out;
}

std::optional<RegionSet> expand_poster(const SelectedSet& poster, const SegmentationParams& params,
                                       std::string* rejection)
{
    if (poster.images.size() != 1)
    {
        if (rejection)
            *rejection = "a poster source needs exactly one image";
        return std::nullopt;
    }
    auto segmentation = segment_poster(poster.images.front(), params);
    if (segmentation.rejected)
    {
        if (rejection)
            *rejection = segmentation.reason;
        return std::nullopt;
    }
    auto regions = crop_regions(poster.images.front(), segmentation);
    return RegionSet { poster.source_id, std::move(regions), std::move(segmentation) };
}

std::string status_label(const QACandidate& qa)
{
    switch (qa.status)
    {
        case QAStatus::Draft: return "draft";
        case QAStatus::Verified: return "verified";
        case QAStatus::Rejected: return "rejected";
        case QAStatus::Revised: return fmt::format("revised({})", qa.revisions);
    }
    return "draft";
}

PipelineError::PipelineError(const std::string& what, QACandidate partial):
    Error(what), _partial(std::move(partial))
{
}

namespace
{

[[noreturn]] void schema_fail(std::string_view what)
{
    throw SchemaError(std::string(what));
}

json extract_json_object(std::string_view text)
{
    const auto begin = text.find('{');
    const auto end = text.rfind('}');
    if (begin == std::string_view::npos || end == std::string_view::npos || end < begin)
        schema_fail("reply contains no JSON object");
    auto doc = json::parse(text.substr(begin, end - begin + 1), nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        schema_fail("reply contains no JSON object");
    return doc;
}

std::string require_text(const json& doc, const char* key)
{
    if (!doc.contains(key) || !doc.at(key).is_string())
        schema_fail(fmt::format("'{}' must be a string", key));
    auto value = std::string(detail::trim(doc.at(key).get<std::string>()));
    if (value.empty())
        schema_fail(fmt::format("'{}' is empty", key));
    return value;
}

ConfidenceRegion parse_region(const json& doc)
{
    if (!doc.is_object() || !doc.contains("image_index") || !doc.contains("bbox"))
        schema_fail("confidence_region needs image_index and bbox");
    const auto& index = doc.at("image_index");
    if (!index.is_number_integer() || index.get<std::int64_t>() < 0)
        schema_fail("confidence_region image_index must be a non-negative integer");
    const auto& bbox = doc.at("bbox");
    if (!bbox.is_array() || bbox.size() != 4 ||
        !std::all_of(bbox.begin(), bbox.end(), [](const json& v) { return v.is_number_integer(); }))
        schema_fail("confidence_region bbox must be 4 integers");
    const auto box = BBox { bbox[0].get<std::int64_t>(), bbox[1].get<std::int64_t>(), bbox[2].get<std::int64_t>(),
                            bbox[3].get<std::int64_t>() };
    if (box.x1 >= box.x2 || box.y1 >= box.y2)
        schema_fail("confidence_region bbox requires x1 < x2 and y1 < y2");
    return { index.get<std::int64_t>(), box };
}

std::string describe_qa(const QACandidate& qa)
{
    auto out = fmt::format("QA id: {}\nQuestion: {}\nAnswer: {}\nReasoning steps:\n", qa.qa_id, qa.question, qa.answer);
    for (std::size_t i = 0; i < qa.reasoning_steps.size(); ++i)
    {
        const auto& s = qa.reasoning_steps[i];
        out += fmt::format("{}. {}", i + 1, s.step);
        if (s.region)
            out += fmt::format(" [image {}, region [{},{},{},{}]]", s.region->image_index, s.region->bbox.x1,
                               s.region->bbox.y1, s.region->bbox.x2, s.region->bbox.y2);
        out += '\n';
    }
    return out;
}

Message image_message(const QACandidate& qa, std::string text)
{
    auto message = Message { Role::User, {}, false };
    if (qa.images)
        for (std::size_t i = 0; i < qa.images->size(); ++i)
        {
            const auto& image = qa.images->at(i);
            message.segments.push_back(
                Segment::make_text(fmt::format("Image {} ({}x{}):", i, image.width(), image.height())));
            message.segments.push_back(Segment::make_image(fmt::format("input:{}", i), image.served));
        }
    message.segments.push_back(Segment::make_text(std::move(text)));
    return message;
}

constexpr auto kPayloadFormat =
    R"({"question": "...", "answer": "...", "reasoning_steps": [{"step": "...", "confidence_region": {"image_index": 0, "bbox": [x1, y1, x2, y2]}}]})";

const std::string& generator_prompt()
{
    static const auto prompt = fmt::format(
        "You write fine-grained visual questions over a set of images. The question must require small details "
        "from the images, possibly across several of them (for example how two images differ or what changed "
        "between them), and must have exactly one correct short answer. Describe how to reach the answer step by "
        "step; give the image index and pixel box of the evidence for each step, or null when a step needs no "
        "region. Reply with one JSON object only:\n{}",
        kPayloadFormat);
    return prompt;
}

const std::string& verifier_prompt()
{
    static const auto prompt = std::string(
        "You check visual question-answer pairs. Judge two things independently: whether the answer is the unique "
        "correct answer to the question given the images (uniqueness), and whether the reasoning steps are sound "
        "and point at the right evidence (reasoning). Reply with one JSON object only: "
        R"({"uniqueness": "pass" or "fail", "reasoning": "pass" or "fail"})");
    return prompt;
}

const std::string& reviser_prompt()
{
    static const auto prompt = fmt::format(
        "You repair visual question-answer pairs that failed review. Rewrite the question, answer and reasoning "
        "steps so that the answer is unique and every step is supported by the images. Reply with one JSON "
        "object only:\n{}",
        kPayloadFormat);
    return prompt;
}

void apply_payload(QACandidate& qa, QAPayload payload)
{
    qa.question = std::move(payload.question);
    qa.answer = std::move(payload.answer);
    qa.reasoning_steps = std::move(payload.reasoning_steps);
}

std::vector<std::string> tokens(std::string_view text)
{
    auto out = std::vector<std::string> {};
    auto current = std::string {};
    for (char c: text)
    {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u) || u >= 0x80)
            current += static_cast<char>(std::tolower(u));
        else if (!current.empty())
            out.push_back(std::exchange(current, {}));
    }
    if (!current.empty())
        out.push_back(std::move(current));
    return out;
}

} // namespace

QAPayload parse_qa_payload(std::string_view text)
{
    const auto doc = extract_json_object(text);
    auto payload = QAPayload {};
    payload.question = require_text(doc, "question");
    payload.answer = require_text(doc, "answer");
    if (!doc.contains("reasoning_steps") || !doc.at("reasoning_steps").is_array() ||
        doc.at("reasoning_steps").empty())
        schema_fail("'reasoning_steps' must be a non-empty array");
    for (const auto& entry: doc.at("reasoning_steps"))
    {
        if (!entry.is_object())
            schema_fail("each reasoning step must be an object");
        auto step = ReasoningStep { require_text(entry, "step"), std::nullopt };
        if (entry.contains("confidence_region") && !entry.at("confidence_region").is_null())
            step.region = parse_region(entry.at("confidence_region"));
        payload.reasoning_steps.push_back(std::move(step));
    }
    return payload;
}

json reasoning_steps_to_json(const std::vector<ReasoningStep>& steps)
{
    auto out = json::array();
    for (const auto& s: steps)
    {
        auto region = json();
        if (s.region)
            region = { { "image_index", s.region->image_index },
                       { "bbox", { s.region->bbox.x1, s.region->bbox.y1, s.region->bbox.x2, s.region->bbox.y2 } } };
        out.push_back({ { "step", detail::sanitize_utf8(s.step) }, { "confidence_region", std::move(region) } });
    }
    return out;
}

QACandidate generate_qa(std::string qa_id, std::vector<std::string> image_paths,
                        std::shared_ptr<const ImageSet> images, const Provenance& provenance,
                        const ModelEndpoint& generator)
{
    auto qa = QACandidate {};
    qa.qa_id = std::move(qa_id);
    qa.image_paths = std::move(image_paths);
    qa.images = std::move(images);
    qa.provenance = provenance;

    auto messages = std::vector<Message> {};
    messages.push_back({ Role::System, { Segment::make_text(generator_prompt()) }, false });
    messages.push_back(image_message(
        qa, fmt::format("QA id: {}\nSource: {}\nWrite one question about these images.", qa.qa_id,
                        provenance.source_id)));

    for (int attempt = 0; attempt < kGenerationAttempts; ++attempt)
    {
        const auto request = ChatRequest { messages, SamplingParams {}, detail::fnv1a(qa.qa_id),
                                           static_cast<std::size_t>(attempt), 0 };
        const auto reply = generator.generate(request);
        try
        {
            apply_payload(qa, parse_qa_payload(reply.text));
            qa.status = QAStatus::Draft;
            qa.diagnostic.clear();
            return qa;
        }
        catch (const SchemaError& e)
        {
            qa.diagnostic = fmt::format("attempt {}: {}", attempt + 1, e.what());
            spdlog::debug("generator reply for {} rejected: {}", qa.qa_id, qa.diagnostic);
        }
    }
    qa.status = QAStatus::Rejected;
    qa.diagnostic = fmt::format("generator failed the schema {} times; last: {}", kGenerationAttempts, qa.diagnostic);
    return qa;
}

Verdict verify_answer(const QACandidate& qa, const ModelEndpoint& verifier, int round)
{
    auto messages = std::vector<Message> {};
    messages.push_back({ Role::System, { Segment::make_text(verifier_prompt()) }, false });
    messages.push_back(image_message(qa, describe_qa(qa)));
    const auto request = ChatRequest { messages, SamplingParams { 0.0, 256 }, detail::fnv1a(qa.qa_id),
                                       static_cast<std::size_t>(round), 0 };
    const auto reply = verifier.generate(request).text;

    auto axis = [](const json& doc, const char* key) -> std::optional<bool> {
        if (!doc.contains(key) || !doc.at(key).is_string())
            return std::nullopt;
        const auto value = detail::normalize_text(doc.at(key).get<std::string>());
        if (value == "pass")
            return true;
        if (value == "fail")
            return false;
        return std::nullopt;
    };

    auto doc = json();
    try
    {
        doc = extract_json_object(reply);
    }
    catch (const SchemaError&)
    {
        return { false, "ambiguous verifier output", fmt::format("no JSON verdict in '{}'", reply.substr(0, 120)) };
    }
    const auto unique = axis(doc, "uniqueness");
    const auto sound = axis(doc, "reasoning");
    if (!unique || !sound)
        return { false, "ambiguous verifier output", fmt::format("unreadable verdict '{}'", doc.dump()) };
    if (*unique && *sound)
        return { true, {}, {} };
    if (!*unique && !*sound)
        return { false, "answer not unique and reasoning unsound", {} };
    return { false, *unique ? "reasoning unsound" : "answer not unique", {} };
}

QACandidate revise_loop(QACandidate qa, const Verdict& failed, const ModelEndpoint& reviser,
                        const ModelEndpoint& verifier, int max_revisions)
{
    if (qa.status == QAStatus::Verified)
        return qa;
    if (qa.status == QAStatus::Rejected && qa.reasoning_steps.empty())
        return qa;

    auto verdict = failed;
    for (int k = 1; k <= max_revisions; ++k)
    {
        try
        {
            auto messages = std::vector<Message> {};
            messages.push_back({ Role::System, { Segment::make_text(reviser_prompt()) }, false });
            messages.push_back(image_message(
                qa, fmt::format("{}Review result: {}\nRevise the pair.", describe_qa(qa), verdict.reason)));
            const auto request = ChatRequest { messages, SamplingParams {}, detail::fnv1a(qa.qa_id),
                                               static_cast<std::size_t>(k - 1), 0 };
            const auto reply = reviser.generate(request).text;

            qa.revisions = k;
            qa.status = QAStatus::Revised;
            qa.provenance.generation_round = k;
            try
            {
                apply_payload(qa, parse_qa_payload(reply));
            }
            catch (const SchemaError& e)
            {
                verdict = { false, "unparseable revision", e.what() };
                qa.history.push_back({ k, qa.question, qa.answer, verdict.reason, verdict.diagnostic });
                continue;
            }

            verdict = verify_answer(qa, verifier, k);
            qa.history.push_back({ k, qa.question, qa.answer, verdict.pass ? "pass" : verdict.reason,
                                   verdict.diagnostic });
            if (verdict.pass)
            {
                qa.status = QAStatus::Verified;
                return qa;
            }
        }
        catch (const Error& e)
        {
            throw PipelineError(fmt::format("revision {} of {} failed: {}", k, qa.qa_id, e.what()), qa);
        }
    }
    qa.status = QAStatus::Rejected;
    qa.diagnostic = fmt::format("still failing after {} revisions: {}", max_revisions, verdict.reason);
    return qa;
}

QACandidate verify_and_revise(QACandidate qa, const ModelEndpoint& verifier, const ModelEndpoint& reviser,
                              int max_revisions)
{
    if (qa.status != QAStatus::Draft)
        return qa;
    auto verdict = Verdict {};
    try
    {
        verdict = verify_answer(qa, verifier, 0);
    }
    catch (const Error& e)
    {
        throw PipelineError(fmt::format("verification of {} failed: {}", qa.qa_id, e.what()), qa);
    }
    qa.history.push_back({ 0, qa.question, qa.answer, verdict.pass ? "pass" : verdict.reason, verdict.diagnostic });
    if (verdict.pass)
    {
        qa.status = QAStatus::Verified;
        return qa;
    }
    return revise_loop(std::move(qa), verdict, reviser, verifier, max_revisions);
}

bool band_keeps(int correct_count, const DifficultyBand& band) noexcept
{
    return correct_count >= band.low && correct_count <= band.high;
}

namespace
{

struct CalibrationAttempt
{
    int correct = 0;
    bool failed = false;
    std::string error;
};

CalibrationAttempt calibrate_one(const QACandidate& qa, const ModelEndpoint& base, const CalibrationParams& params)
{
    if (!qa.images)
        return { 0, true, "QA has no images" };
    auto spec = EpisodeSpec {};
    spec.prompt_id = qa.qa_id;
    spec.question = qa.question;
    spec.image_set_ref = qa.qa_id;
    spec.system_prompt = params.system_prompt;
    spec.sampling = params.sampling;
    spec.seed = params.seed ^ detail::fnv1a(qa.qa_id);

    auto attempt = CalibrationAttempt {};
    try
    {
        const auto outcomes = run_group(spec, *qa.images, base, params.limits, params.rollouts, params.concurrency);
        const auto key = AnswerKey { AnswerKind::Exact, qa.answer, {} };
        for (const auto& o: outcomes)
        {
            if (!o.trajectory)
            {
                attempt.failed = true;
                attempt.error = o.error;
                continue;
            }
            if (o.trajectory->final_answer && rule_match(*o.trajectory->final_answer, key))
                ++attempt.correct;
        }
    }
    catch (const Error& e)
    {
        attempt.failed = true;
        attempt.error = e.what();
    }
    return attempt;
}

} // namespace

std::vector<DifficultyRecord> calibrate_difficulty(const std::vector<QACandidate>& qas, const ModelEndpoint& base,
                                                   const CalibrationParams& params)
{
    if (params.rollouts < 1)
        throw std::invalid_argument("calibration needs at least one rollout");

    auto records = std::vector<DifficultyRecord>(qas.size());
    auto requeue = std::vector<std::size_t> {};
    for (std::size_t i = 0; i < qas.size(); ++i)
    {
        auto& r = records[i];
        r.qa_id = qas[i].qa_id;
        r.rollouts = params.rollouts;
        const auto attempt = calibrate_one(qas[i], base, params);
        r.correct_count = attempt.correct;
        if (attempt.failed)
        {
            r.error = attempt.error;
            requeue.push_back(i);
        }
    }

    for (auto i: requeue)
    {
        auto& r = records[i];
        r.requeued = true;
        spdlog::warn("re-running calibration of {} after a failed rollout: {}", r.qa_id, r.error);
        const auto attempt = calibrate_one(qas[i], base, params);
        r.correct_count = attempt.correct;
        r.error = attempt.error;
        r.excluded = attempt.failed;
    }

    for (auto& r: records)
        r.kept = !r.excluded && band_keeps(r.correct_count, params.band);
    return records;
}

bool answer_leaks(std::string_view question, std::string_view answer)
{
    if (detail::normalize_text(answer).size() < 2)
        return false;
    const auto needle = tokens(answer);
    const auto haystack = tokens(question);
    if (needle.empty() || needle.size() > haystack.size())
        return false;
    return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

FilterResult rule_filter(const std::vector<QACandidate>& qas, double review_fraction, std::uint64_t seed)
{
    auto out = FilterResult {};
    auto seen = std::set<std::string> {};
    for (const auto& qa: qas)
    {
        auto reason = std::string {};
        if (answer_leaks(qa.question, qa.answer))
            reason = "answer leaked in question";
        else if (detail::split_words(qa.question).size() < kMinQuestionWords)
            reason = fmt::format("question shorter than {} words", kMinQuestionWords);
        else
        {
            for (const auto& step: qa.reasoning_steps)
                if (step.region && static_cast<std::size_t>(step.region->image_index) >= qa.image_paths.size())
                {
                    reason = fmt::format("confidence region references image {} of {}", step.region->image_index,
                                         qa.image_paths.size());
                    break;
                }
        }
        if (reason.empty() && seen.contains(detail::normalize_text(qa.question)))
            reason = "duplicate question";

        if (!reason.empty())
        {
            out.dropped.push_back({ qa.qa_id, std::move(reason) });
            continue;
        }
        seen.insert(detail::normalize_text(qa.question));
        out.kept.push_back(qa);
    }

    if (!out.kept.empty() && review_fraction > 0.0)
    {
        const auto count = std::min(
            out.kept.size(),
            std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(review_fraction * static_cast<double>(out.kept.size()) - 1e-9))));
        auto order = std::vector<std::size_t>(out.kept.size());
        std::iota(order.begin(), order.end(), 0);
        auto rank = [&](std::size_t i) { return detail::splitmix64(seed ^ detail::fnv1a(out.kept[i].qa_id)); };
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return rank(a) != rank(b) ? rank(a) < rank(b) : a < b;
        });
        order.resize(count);
        std::sort(order.begin(), order.end());
        for (auto i: order)
            out.review.push_back(out.kept[i].qa_id);
    }
    return out;
}

} // namespace visagent
