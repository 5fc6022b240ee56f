#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "varbench/interactions.hpp"
#include "varbench/tensor.hpp"

namespace varbench {

/// Pixel array in CHW order, every value in [0,1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    std::size_t size() const { return pixels.size(); }
    double& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const {
        return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    static Image blank(int channels, int height, int width, double fill = 0.0) {
        Image img{channels, height, width, {}};
        img.pixels.assign(static_cast<std::size_t>(channels) * height * width, fill);
        return img;
    }

    bool in_range() const {
        return std::all_of(pixels.begin(), pixels.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
    }

    /// 1xCxHxW tensor view for the classifier.
    Tensor to_tensor() const {
        return Tensor::from_data({1, channels, height, width}, pixels);
    }
    static Image from_tensor(const Tensor& t) {
        if (t.rank() != 4 || t.dim(0) != 1)
            throw std::invalid_argument("Image::from_tensor expects a 1xCxHxW tensor");
        Image img{t.dim(1), t.dim(2), t.dim(3), std::vector<double>(t.values().begin(), t.values().end())};
        return img;
    }
};

/// Image plus the item it depicts and its class label.
struct ImageSample {
    Id item_id = 0;
    Image image;
    int label = -1;
};

/// Writes 8-bit RGB (or gray) PNG; values are quantized with round(v * 255).
inline void save_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("save_png: expected 1 or 3 channels, got " + std::to_string(img.channels));
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(img.width) * img.height * img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                buf[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr))
        throw std::runtime_error("save_png: failed to write " + path + ": " + png.message);
}

inline Image load_png(const std::string& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str()))
        throw std::runtime_error("load_png: cannot open " + path + ": " + png.message);
    const int channels = PNG_IMAGE_PIXEL_CHANNELS(png.format) >= 3 ? 3 : 1;
    png.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr))
        throw std::runtime_error("load_png: failed to read " + path + ": " + png.message);
    Image img = Image::blank(channels, static_cast<int>(png.height), static_cast<int>(png.width));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(c, y, x) =
                    buf[(static_cast<std::size_t>(y) * img.width + x) * channels + c] / 255.0;
    return img;
}

inline std::string item_image_path(const std::string& dir, Id item_id) {
    return dir + "/" + std::to_string(item_id) + ".png";
}

}  // namespace varbench
