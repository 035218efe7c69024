// SPDX-License-Identifier: Apache-2.0
#include <visagent/image_io.hpp>

#include <visagent/errors.hpp>

#include <fmt/format.h>
#include <cstring>
#include <opencv2/imgcodecs.hpp>
#include <openssl/evp.h>

namespace visagent
{

cv::Mat load_image(const std::filesystem::path& path)
{
    auto image = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (image.empty())
        throw ImageError(fmt::format("cannot decode image {}", path.string()));
    if (image.cols <= 0 || image.rows <= 0)
        throw ImageError(fmt::format("image {} has zero area", path.string()));
    return image;
}

std::vector<std::uint8_t> encode_png(const cv::Mat& image)
{
    auto out = std::vector<std::uint8_t> {};
    if (!cv::imencode(".png", image, out))
        throw ImageError("PNG encoding failed");
    return out;
}

void write_png(const std::filesystem::path& path, const cv::Mat& image)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), image))
        throw ImageError(fmt::format("cannot write {}", path.string()));
}

std::string base64_encode(std::span<const std::uint8_t> bytes)
{
    if (bytes.empty())
        return {};
    auto out = std::string(4 * ((bytes.size() + 2) / 3), '\0');
    const auto written = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                         static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(written));
    return out;
}

bool images_equal(const cv::Mat& a, const cv::Mat& b)
{
    if (a.size() != b.size() || a.type() != b.type())
        return false;
    if (a.empty())
        return true;
    for (int r = 0; r < a.rows; ++r)
    {
        const auto row_bytes = static_cast<std::size_t>(a.cols) * a.elemSize();
        if (std::memcmp(a.ptr(r), b.ptr(r), row_bytes) != 0)
            return false;
    }
    return true;
}

} // namespace visagent
