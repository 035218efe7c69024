// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <visagent/tool_protocol.hpp>

#include <opencv2/core.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace visagent
{

inline constexpr std::int64_t kDefaultTrainPixelBudget = 4'000'000;
/// 16384 patches of 28x28.
inline constexpr std::int64_t kDefaultEvalPixelBudget = 16384LL * 28 * 28;
/// Vision patch side; also the minimum crop side.
inline constexpr int kPatchSide = 28;
inline constexpr int kMaxZoomFactor = 2;

struct SourceImage
{
    std::string source; ///< path or identifier, echoed into exports
    cv::Mat pixels;
};

struct ServedImage
{
    std::string source;
    int original_width = 0;
    int original_height = 0;
    cv::Mat served;

    [[nodiscard]] int width() const noexcept { return served.cols; }
    [[nodiscard]] int height() const noexcept { return served.rows; }
    [[nodiscard]] std::int64_t pixels() const noexcept { return static_cast<std::int64_t>(served.cols) * served.rows; }
};

/// Indexed input images, downscaled by one shared factor so the served total
/// fits the pixel budget. Immutable after prepare(); safe to share between
/// concurrent trajectories.
class ImageSet
{
public:
    /// Throws ImageError for an empty list or a zero-area image, and
    /// std::invalid_argument for non-positive budgets or a per-image cap below
    /// the largest served image. per_image_max_pixels = 0 means "same as the
    /// total budget".
    [[nodiscard]] static ImageSet prepare(std::vector<SourceImage> raw, std::int64_t total_pixel_budget,
                                          std::int64_t per_image_max_pixels = 0);

    [[nodiscard]] const std::vector<ServedImage>& images() const noexcept { return _images; }
    [[nodiscard]] std::size_t size() const noexcept { return _images.size(); }
    [[nodiscard]] const ServedImage& at(std::size_t i) const { return _images.at(i); }
    [[nodiscard]] double scale() const noexcept { return _scale; }
    [[nodiscard]] std::int64_t total_pixel_budget() const noexcept { return _total_budget; }
    [[nodiscard]] std::int64_t per_image_max_pixels() const noexcept { return _per_image_max; }
    [[nodiscard]] std::int64_t total_served_pixels() const noexcept;

    /// Shared scale factor for a list of original dimensions under a budget:
    /// the largest s <= 1 whose rounded dimensions fit.
    [[nodiscard]] static double shared_scale(const std::vector<cv::Size>& originals, std::int64_t budget);
    [[nodiscard]] static cv::Size scaled_size(cv::Size original, double scale) noexcept;

private:
    std::vector<ServedImage> _images;
    double _scale = 1.0;
    std::int64_t _total_budget = 0;
    std::int64_t _per_image_max = 0;
};

enum class ToolStatus
{
    Ok,
    Error,
};

struct ToolResult
{
    ToolStatus status = ToolStatus::Error;
    std::string message;
    cv::Mat image; ///< empty when status is Error
    std::int64_t image_pixels = 0;
    ToolCall source_call;
    std::optional<BBox> region; ///< effective crop region for zoom_in
    int zoom_factor = 0;

    [[nodiscard]] bool ok() const noexcept { return status == ToolStatus::Ok; }
};

/// Intersects a box with [0,width]x[0,height]. Never overflows.
[[nodiscard]] BBox clamp_box(const BBox& box, std::int64_t width, std::int64_t height) noexcept;

/// Clamps, then grows any side shorter than kPatchSide (or the image side, if
/// smaller) symmetrically, shifting the window back inside the borders.
/// Returns nullopt when the clamped box is empty.
[[nodiscard]] std::optional<BBox> crop_region(const BBox& requested, int width, int height) noexcept;

/// Largest integer k in [1, kMaxZoomFactor] with (w*k)*(h*k) <= per_image_max
/// and min(w,h)*k <= 2 * the source's corresponding side.
[[nodiscard]] int zoom_factor(int crop_width, int crop_height, int source_width, int source_height,
                              std::int64_t per_image_max_pixels) noexcept;

[[nodiscard]] ToolResult execute_zoom_in(const ImageSet& set, const ZoomIn& call);
[[nodiscard]] ToolResult execute_lookback(const ImageSet& set, const LookbackReuse& call);
[[nodiscard]] ToolResult execute_tool(const ImageSet& set, const ToolCall& call);

/// Tool output as it is appended to the conversation: one status line
/// echoing the call arguments, then at most one image.
struct RenderedToolResult
{
    std::string text;
    std::optional<cv::Mat> image;
};

[[nodiscard]] RenderedToolResult serialize_tool_result(const ToolResult& result);

} // namespace visagent
