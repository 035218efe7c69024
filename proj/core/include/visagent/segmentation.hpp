// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <opencv2/core.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace visagent
{

struct SegmentationParams
{
    std::int64_t min_region_pixels = 250'000; ///< regions below this are not split further
    double gutter_fraction = 0.02;            ///< min gutter width relative to the poster side
    int min_poster_side = 1000;
    std::size_t min_regions = 2;
    std::size_t max_regions = 12;
    double variance_threshold = 16.0;  ///< gray-level variance of a gutter line
    double background_tolerance = 12.0; ///< max |mean - background| of a gutter line
};

struct CutLine
{
    enum class Axis
    {
        Horizontal, ///< splits top from bottom at row `position`
        Vertical,   ///< splits left from right at column `position`
    };
    Axis axis = Axis::Horizontal;
    int position = 0;
};

struct Segmentation
{
    bool rejected = false;
    std::string reason;            ///< set when rejected
    std::vector<cv::Rect> regions; ///< reading order of the recursive cut; kept when rejected
    std::vector<CutLine> cuts;     ///< in the order they were made
    int background = 255;          ///< estimated background gray level
};

/// Recursive whitespace-gutter (XY-cut) segmentation on gray-level
/// projection profiles. Never throws for a non-empty 8-bit image; problems
/// are reported through `rejected`.
[[nodiscard]] Segmentation segment_poster(const cv::Mat& poster, const SegmentationParams& params = {});

/// Deep copies of the region crops.
[[nodiscard]] std::vector<cv::Mat> crop_regions(const cv::Mat& poster, const Segmentation& segmentation);

/// Pixels that differ from the background by more than the tolerance.
[[nodiscard]] cv::Mat content_mask(const cv::Mat& poster, int background, double tolerance);

} // namespace visagent
