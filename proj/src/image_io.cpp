#include "fftrain/data.hpp"
#include "fftrain/error.hpp"

#include <fmt/core.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

namespace fftrain {

Image read_image(const std::filesystem::path& path)
{
    const cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty()) {
        throw DataError(fmt::format("cannot decode image '{}'", path.string()));
    }
    if (mat.depth() != CV_8U) {
        throw DataError(fmt::format("'{}': only 8-bit images are supported", path.string()));
    }
    const int channels = mat.channels();
    if (channels != 1 && channels != 3) {
        throw DataError(fmt::format("'{}': expected an RGB or grayscale image, got {} channels", path.string(), channels));
    }
    Image image(static_cast<std::size_t>(mat.cols), static_cast<std::size_t>(mat.rows),
                static_cast<std::size_t>(channels));
    for (int y = 0; y < mat.rows; ++y) {
        const auto* src = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < mat.cols; ++x) {
            for (int c = 0; c < channels; ++c) {
                // OpenCV stores BGR; flip to RGB.
                const int from = channels == 3 ? 2 - c : c;
                image.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(c)) =
                    src[x * channels + from];
            }
        }
    }
    return image;
}

void write_png(const std::filesystem::path& path, const Image& image)
{
    if (image.channels != 1 && image.channels != 3) {
        throw DataError(fmt::format("cannot write a {}-channel image", image.channels));
    }
    const int channels = static_cast<int>(image.channels);
    cv::Mat mat(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC(channels));
    for (int y = 0; y < mat.rows; ++y) {
        auto* dst = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < mat.cols; ++x) {
            for (int c = 0; c < channels; ++c) {
                const int to = channels == 3 ? 2 - c : c;
                const double v = image.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(c));
                dst[x * channels + to] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
            }
        }
    }
    if (!cv::imwrite(path.string(), mat)) {
        throw DataError(fmt::format("cannot write image '{}'", path.string()));
    }
}

} // namespace fftrain
