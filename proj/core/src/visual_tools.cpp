// SPDX-License-Identifier: Apache-2.0
#include <visagent/visual_tools.hpp>

#include <visagent/errors.hpp>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace visagent
{

namespace
{

std::int64_t total_pixels(const std::vector<cv::Size>& sizes)
{
    auto total = std::int64_t { 0 };
    for (const auto& s: sizes)
        total += static_cast<std::int64_t>(s.width) * s.height;
    return total;
}

std::string out_of_range_message(std::int64_t index, std::size_t count)
{
    return fmt::format("image_index {} out of range ({} image{} provided)", index, count, count == 1 ? "" : "s");
}

bool index_valid(std::int64_t index, const ImageSet& set)
{
    return index >= 0 && static_cast<std::uint64_t>(index) < set.size();
}

} // namespace

cv::Size ImageSet::scaled_size(cv::Size original, double scale) noexcept
{
    const auto w = static_cast<int>(std::lround(original.width * scale));
    const auto h = static_cast<int>(std::lround(original.height * scale));
    return { std::max(1, w), std::max(1, h) };
}

double ImageSet::shared_scale(const std::vector<cv::Size>& originals, std::int64_t budget)
{
    const auto total = total_pixels(originals);
    if (total <= budget)
        return 1.0;

    auto scale = std::sqrt(static_cast<double>(budget) / static_cast<double>(total));
    // Rounding can push the served total a few pixels over; shrink until it fits.
    for (int guard = 0; guard < 256; ++guard)
    {
        auto served = std::vector<cv::Size> {};
        served.reserve(originals.size());
        for (const auto& s: originals)
            served.push_back(scaled_size(s, scale));
        const auto served_total = total_pixels(served);
        if (served_total <= budget)
            return scale;
        scale *= std::min(1.0 - 1e-9, std::sqrt(static_cast<double>(budget) / static_cast<double>(served_total)));
    }
    throw std::invalid_argument("pixel budget too small for the image set");
}

ImageSet ImageSet::prepare(std::vector<SourceImage> raw, std::int64_t total_pixel_budget,
                           std::int64_t per_image_max_pixels)
{
    if (raw.empty())
        throw ImageError("image set is empty");
    if (total_pixel_budget <= 0)
        throw std::invalid_argument("total pixel budget must be positive");
    if (per_image_max_pixels < 0)
        throw std::invalid_argument("per-image pixel cap must be non-negative");

    auto originals = std::vector<cv::Size> {};
    originals.reserve(raw.size());
    for (const auto& image: raw)
    {
        if (image.pixels.empty() || image.pixels.cols <= 0 || image.pixels.rows <= 0)
            throw ImageError(fmt::format("image '{}' has zero area", image.source));
        originals.push_back(image.pixels.size());
    }

    auto set = ImageSet {};
    set._total_budget = total_pixel_budget;
    set._per_image_max = per_image_max_pixels == 0 ? total_pixel_budget : per_image_max_pixels;
    set._scale = shared_scale(originals, total_pixel_budget);

    set._images.reserve(raw.size());
    for (auto& image: raw)
    {
        auto served = ServedImage {};
        served.source = std::move(image.source);
        served.original_width = image.pixels.cols;
        served.original_height = image.pixels.rows;
        if (set._scale < 1.0)
        {
            const auto target = scaled_size(image.pixels.size(), set._scale);
            cv::resize(image.pixels, served.served, target, 0, 0, cv::INTER_AREA);
        }
        else
        {
            served.served = std::move(image.pixels);
        }
        if (served.pixels() > set._per_image_max)
            throw std::invalid_argument(fmt::format("served image '{}' ({} px) exceeds the per-image cap of {} px",
                                                    served.source, served.pixels(), set._per_image_max));
        set._images.push_back(std::move(served));
    }
    return set;
}

std::int64_t ImageSet::total_served_pixels() const noexcept
{
    auto total = std::int64_t { 0 };
    for (const auto& image: _images)
        total += image.pixels();
    return total;
}

BBox clamp_box(const BBox& box, std::int64_t width, std::int64_t height) noexcept
{
    auto clamp = [](std::int64_t v, std::int64_t hi) { return std::clamp<std::int64_t>(v, 0, hi); };
    auto out = BBox { clamp(box.x1, width), clamp(box.y1, height), clamp(box.x2, width), clamp(box.y2, height) };
    out.x2 = std::max(out.x1, out.x2);
    out.y2 = std::max(out.y1, out.y2);
    return out;
}

std::optional<BBox> crop_region(const BBox& requested, int width, int height) noexcept
{
    auto box = clamp_box(requested, width, height);
    if (box.width() <= 0 || box.height() <= 0)
        return std::nullopt;

    auto widen = [](std::int64_t& lo, std::int64_t& hi, std::int64_t limit) {
        const auto target = std::min<std::int64_t>(kPatchSide, limit);
        const auto side = hi - lo;
        if (side >= target)
            return;
        const auto deficit = target - side;
        lo -= deficit / 2;
        hi += deficit - deficit / 2;
        if (lo < 0)
        {
            hi -= lo;
            lo = 0;
        }
        if (hi > limit)
        {
            lo -= hi - limit;
            hi = limit;
        }
    };
    widen(box.x1, box.x2, width);
    widen(box.y1, box.y2, height);
    return box;
}

int zoom_factor(int crop_width, int crop_height, int source_width, int source_height,
                std::int64_t per_image_max_pixels) noexcept
{
    const auto min_side = std::min(crop_width, crop_height);
    const auto matching_source_side = crop_width <= crop_height ? source_width : source_height;
    auto best = 1;
    for (int k = 2; k <= kMaxZoomFactor; ++k)
    {
        const auto pixels = static_cast<std::int64_t>(crop_width) * k * static_cast<std::int64_t>(crop_height) * k;
        if (pixels > per_image_max_pixels)
            break;
        if (static_cast<std::int64_t>(min_side) * k > 2LL * matching_source_side)
            break;
        best = k;
    }
    return best;
}

ToolResult execute_zoom_in(const ImageSet& set, const ZoomIn& call)
{
    auto result = ToolResult {};
    result.source_call = call;
    if (!index_valid(call.image_index, set))
    {
        result.message = out_of_range_message(call.image_index, set.size());
        return result;
    }

    const auto& image = set.at(static_cast<std::size_t>(call.image_index));
    const auto region = crop_region(call.bbox, image.width(), image.height());
    if (!region)
    {
        result.message = fmt::format("bbox [{},{},{},{}] does not overlap image {} ({}x{})", call.bbox.x1, call.bbox.y1,
                                     call.bbox.x2, call.bbox.y2, call.image_index, image.width(), image.height());
        return result;
    }

    const auto rect = cv::Rect(static_cast<int>(region->x1), static_cast<int>(region->y1),
                               static_cast<int>(region->width()), static_cast<int>(region->height()));
    const auto k = zoom_factor(rect.width, rect.height, image.width(), image.height(), set.per_image_max_pixels());
    if (k == 1)
        result.image = image.served(rect).clone();
    else
        cv::resize(image.served(rect), result.image, cv::Size(rect.width * k, rect.height * k), 0, 0, cv::INTER_CUBIC);

    result.status = ToolStatus::Ok;
    result.region = region;
    result.zoom_factor = k;
    result.image_pixels = static_cast<std::int64_t>(result.image.cols) * result.image.rows;
    result.message = fmt::format("cropped [{},{},{},{}] of image {} at {}x", region->x1, region->y1, region->x2,
                                 region->y2, call.image_index, k);
    return result;
}

ToolResult execute_lookback(const ImageSet& set, const LookbackReuse& call)
{
    auto result = ToolResult {};
    result.source_call = call;
    if (!index_valid(call.image_index, set))
    {
        result.message = out_of_range_message(call.image_index, set.size());
        return result;
    }
    const auto& image = set.at(static_cast<std::size_t>(call.image_index));
    result.status = ToolStatus::Ok;
    result.image = image.served;
    result.image_pixels = image.pixels();
    result.message = fmt::format("returned image {} ({})", call.image_index, call.reason);
    return result;
}

ToolResult execute_tool(const ImageSet& set, const ToolCall& call)
{
    if (const auto* zoom = std::get_if<ZoomIn>(&call))
        return execute_zoom_in(set, *zoom);
    return execute_lookback(set, std::get<LookbackReuse>(call));
}

RenderedToolResult serialize_tool_result(const ToolResult& result)
{
    auto out = RenderedToolResult {};
    const auto name = tool_name(result.source_call);
    if (!result.ok())
    {
        out.text = fmt::format("Tool {} failed: {}.", name, result.message);
        return out;
    }
    if (const auto* zoom = std::get_if<ZoomIn>(&result.source_call))
    {
        const auto& b = zoom->bbox;
        out.text = fmt::format("Tool {} succeeded on image {}, region [{},{},{},{}] ({}):", name, zoom->image_index, b.x1,
                               b.y1, b.x2, b.y2, zoom->label);
    }
    else
    {
        const auto& look = std::get<LookbackReuse>(result.source_call);
        out.text = fmt::format("Tool {} returned image {} (reason: {}):", name, look.image_index, look.reason);
    }
    out.image = result.image;
    return out;
}

} // namespace visagent
