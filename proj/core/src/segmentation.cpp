// SPDX-License-Identifier: Apache-2.0
#include <visagent/segmentation.hpp>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

namespace visagent
{

namespace
{

cv::Mat to_gray(const cv::Mat& image)
{
    auto gray = cv::Mat {};
    if (image.channels() == 3)
        cv::cvtColor(image, gray, cv::COLOR_BGR2GRAY);
    else if (image.channels() == 4)
        cv::cvtColor(image, gray, cv::COLOR_BGRA2GRAY);
    else
        gray = image;
    if (gray.depth() != CV_8U)
    {
        auto converted = cv::Mat {};
        gray.convertTo(converted, CV_8U);
        gray = converted;
    }
    return gray;
}

int histogram_mode(const cv::Mat& gray)
{
    auto counts = std::array<std::int64_t, 256> {};
    for (int y = 0; y < gray.rows; ++y)
    {
        const auto* row = gray.ptr<std::uint8_t>(y);
        for (int x = 0; x < gray.cols; ++x)
            ++counts[row[x]];
    }
    auto best = 255;
    for (int v = 255; v >= 0; --v)
        if (counts[static_cast<std::size_t>(v)] > counts[static_cast<std::size_t>(best)])
            best = v;
    return best;
}

class Splitter
{
public:
    Splitter(const cv::Mat& gray, int background, const SegmentationParams& params):
        _background(background), _params(params)
    {
        gray.convertTo(_values, CV_64F);
        _squares = _values.mul(_values);
        _min_gutter_rows = std::max(1, static_cast<int>(std::ceil(params.gutter_fraction * gray.rows)));
        _min_gutter_cols = std::max(1, static_cast<int>(std::ceil(params.gutter_fraction * gray.cols)));
    }

    /// Gutter flag per row (axis 0) or column (axis 1) of `rect`.
    [[nodiscard]] std::vector<bool> gutter_lines(const cv::Rect& rect, int axis) const
    {
        // reduce along columns gives one value per row and vice versa
        const auto dim = axis == 0 ? 1 : 0;
        auto sums = cv::Mat {};
        auto squares = cv::Mat {};
        cv::reduce(_values(rect), sums, dim, cv::REDUCE_SUM, CV_64F);
        cv::reduce(_squares(rect), squares, dim, cv::REDUCE_SUM, CV_64F);
        const auto n = static_cast<double>(axis == 0 ? rect.width : rect.height);
        const auto lines = axis == 0 ? rect.height : rect.width;
        auto out = std::vector<bool>(static_cast<std::size_t>(lines));
        for (int i = 0; i < lines; ++i)
        {
            const auto s = sums.at<double>(axis == 0 ? i : 0, axis == 0 ? 0 : i);
            const auto q = squares.at<double>(axis == 0 ? i : 0, axis == 0 ? 0 : i);
            const auto mean = s / n;
            const auto variance = std::max(0.0, q / n - mean * mean);
            out[static_cast<std::size_t>(i)] = variance <= _params.variance_threshold &&
                                                std::fabs(mean - _background) <= _params.background_tolerance;
        }
        return out;
    }

    [[nodiscard]] cv::Rect trim(cv::Rect rect) const
    {
        const auto rows = gutter_lines(rect, 0);
        auto top = 0;
        auto bottom = rect.height;
        while (top < bottom && rows[static_cast<std::size_t>(top)])
            ++top;
        while (bottom > top && rows[static_cast<std::size_t>(bottom - 1)])
            --bottom;
        if (top == bottom)
            return {};
        rect = cv::Rect(rect.x, rect.y + top, rect.width, bottom - top);

        const auto cols = gutter_lines(rect, 1);
        auto left = 0;
        auto right = rect.width;
        while (left < right && cols[static_cast<std::size_t>(left)])
            ++left;
        while (right > left && cols[static_cast<std::size_t>(right - 1)])
            --right;
        return cv::Rect(rect.x + left, rect.y, right - left, rect.height);
    }

    struct Gutter
    {
        int axis = 0;  ///< 0: rows (horizontal cut), 1: columns (vertical cut)
        int begin = 0; ///< relative to the region origin
        int end = 0;

        [[nodiscard]] int width() const noexcept { return end - begin; }
    };

    [[nodiscard]] std::optional<Gutter> widest_gutter(const cv::Rect& rect) const
    {
        auto best = std::optional<Gutter> {};
        for (int axis: { 0, 1 })
        {
            const auto lines = gutter_lines(rect, axis);
            const auto min_width = axis == 0 ? _min_gutter_rows : _min_gutter_cols;
            for (std::size_t i = 0; i < lines.size();)
            {
                if (!lines[i])
                {
                    ++i;
                    continue;
                }
                auto j = i;
                while (j < lines.size() && lines[j])
                    ++j;
                const auto g = Gutter { axis, static_cast<int>(i), static_cast<int>(j) };
                // strict comparison keeps the horizontal gutter on ties
                if (g.width() >= min_width && (!best || g.width() > best->width()))
                    best = g;
                i = j;
            }
        }
        return best;
    }

    void split(const cv::Rect& region, Segmentation& out) const
    {
        if (out.regions.size() > _params.max_regions)
            return;
        const auto rect = trim(region);
        if (rect.empty())
            return;
        if (static_cast<std::int64_t>(rect.area()) < _params.min_region_pixels)
        {
            out.regions.push_back(rect);
            return;
        }
        const auto gutter = widest_gutter(rect);
        if (!gutter)
        {
            out.regions.push_back(rect);
            return;
        }

        const auto center = (gutter->begin + gutter->end) / 2;
        if (gutter->axis == 0)
        {
            out.cuts.push_back({ CutLine::Axis::Horizontal, rect.y + center });
            split(cv::Rect(rect.x, rect.y, rect.width, gutter->begin), out);
            split(cv::Rect(rect.x, rect.y + gutter->end, rect.width, rect.height - gutter->end), out);
        }
        else
        {
            out.cuts.push_back({ CutLine::Axis::Vertical, rect.x + center });
            split(cv::Rect(rect.x, rect.y, gutter->begin, rect.height), out);
            split(cv::Rect(rect.x + gutter->end, rect.y, rect.width - gutter->end, rect.height), out);
        }
    }

private:
    cv::Mat _values;
    cv::Mat _squares;
    int _background;
    const SegmentationParams& _params;
    int _min_gutter_rows = 1;
    int _min_gutter_cols = 1;
};

} // namespace

Segmentation segment_poster(const cv::Mat& poster, const SegmentationParams& params)
{
    auto out = Segmentation {};
    if (poster.empty())
    {
        out.rejected = true;
        out.reason = "empty image";
        return out;
    }
    if (std::min(poster.rows, poster.cols) < params.min_poster_side)
    {
        out.rejected = true;
        out.reason = fmt::format("poster side {} below {} px", std::min(poster.rows, poster.cols),
                                 params.min_poster_side);
        return out;
    }

    const auto gray = to_gray(poster);
    out.background = histogram_mode(gray);
    const auto splitter = Splitter(gray, out.background, params);
    const auto full = cv::Rect(0, 0, gray.cols, gray.rows);
    if (splitter.trim(full).empty())
    {
        out.rejected = true;
        out.reason = "blank poster";
        return out;
    }

    splitter.split(full, out);
    if (out.regions.size() < params.min_regions)
    {
        out.rejected = true;
        out.reason = "single-block poster";
    }
    else if (out.regions.size() > params.max_regions)
    {
        out.rejected = true;
        out.reason = fmt::format("more than {} regions", params.max_regions);
    }
    return out;
}

std::vector<cv::Mat> crop_regions(const cv::Mat& poster, const Segmentation& segmentation)
{
    auto out = std::vector<cv::Mat> {};
    out.reserve(segmentation.regions.size());
    for (const auto& r: segmentation.regions)
        out.push_back(poster(r).clone());
    return out;
}

cv::Mat content_mask(const cv::Mat& poster, int background, double tolerance)
{
    const auto gray = to_gray(poster);
    auto diff = cv::Mat {};
    cv::absdiff(gray, cv::Scalar(background), diff);
    auto mask = cv::Mat {};
    cv::threshold(diff, mask, tolerance, 255, cv::THRESH_BINARY);
    return mask;
}

} // namespace visagent
