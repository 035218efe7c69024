// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <opencv2/core.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace visagent
{

/// Decodes PNG/JPEG (anything imgcodecs reads) into 8-bit BGR.
/// Throws ImageError on unreadable or empty images.
[[nodiscard]] cv::Mat load_image(const std::filesystem::path& path);

[[nodiscard]] std::vector<std::uint8_t> encode_png(const cv::Mat& image);
void write_png(const std::filesystem::path& path, const cv::Mat& image);

[[nodiscard]] std::string base64_encode(std::span<const std::uint8_t> bytes);

[[nodiscard]] inline std::int64_t pixel_count(const cv::Mat& image) noexcept
{
    return static_cast<std::int64_t>(image.cols) * image.rows;
}

/// Pixel-exact equality (same size, type and bytes).
[[nodiscard]] bool images_equal(const cv::Mat& a, const cv::Mat& b);

} // namespace visagent
