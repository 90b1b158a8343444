#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "tacos/error.hpp"

namespace tacos {

/// Grayscale images with intensities in [0, 1] and their class labels.
struct Dataset {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> pixels; // size() * rows * cols, row-major per image
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t image_size() const { return rows * cols; }

    std::span<const float> image(std::size_t i) const
    {
        return std::span<const float>(pixels).subspan(i * image_size(), image_size());
    }
};

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

namespace detail {

/// Reads plain or gzip-compressed files through the same interface.
class GzReader {
  public:
    explicit GzReader(const std::filesystem::path& path) : path_(path.string())
    {
        file_ = gzopen(path_.c_str(), "rb");
        if (file_ == nullptr) {
            throw DataError("cannot open " + path_);
        }
    }
    GzReader(const GzReader&) = delete;
    GzReader& operator=(const GzReader&) = delete;
    ~GzReader() { gzclose(file_); }

    void read(void* dst, std::size_t n, const char* what)
    {
        auto* out = static_cast<unsigned char*>(dst);
        while (n > 0) {
            const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
            const int got = gzread(file_, out, chunk);
            if (got <= 0) {
                throw DataError(path_ + ": truncated while reading " + what);
            }
            out += got;
            n -= static_cast<std::size_t>(got);
        }
    }

    std::uint32_t read_be32(const char* what)
    {
        unsigned char b[4];
        read(b, 4, what);
        return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
    }

    const std::string& path() const { return path_; }

  private:
    std::string path_;
    gzFile file_ = nullptr;
};

inline void write_be32(gzFile f, std::uint32_t v)
{
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    gzwrite(f, b, 4);
}

} // namespace detail

/// Loads an IDX image file (magic 0x803, N x rows x cols bytes) and its
/// label file (magic 0x801, N bytes). Either may be gzip-compressed.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path)
{
    detail::GzReader img(images_path);
    if (const auto magic = img.read_be32("magic"); magic != idx_images_magic) {
        throw DataError(img.path() + ": bad IDX image magic " + std::to_string(magic));
    }
    const auto n_images = img.read_be32("image count");
    const auto rows = img.read_be32("row count");
    const auto cols = img.read_be32("column count");

    detail::GzReader lab(labels_path);
    if (const auto magic = lab.read_be32("magic"); magic != idx_labels_magic) {
        throw DataError(lab.path() + ": bad IDX label magic " + std::to_string(magic));
    }
    const auto n_labels = lab.read_be32("label count");
    if (n_images != n_labels) {
        throw DataError("image count " + std::to_string(n_images) + " does not match label count " +
                        std::to_string(n_labels));
    }

    Dataset ds;
    ds.rows = rows;
    ds.cols = cols;
    const std::size_t total = std::size_t{n_images} * rows * cols;
    std::vector<unsigned char> raw(total);
    img.read(raw.data(), raw.size(), "pixels");
    ds.pixels.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
        ds.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
    }
    ds.labels.resize(n_labels);
    lab.read(ds.labels.data(), ds.labels.size(), "labels");
    return ds;
}

/// Writes byte images and labels as IDX; gzip-compressed when `compress`.
inline void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                      std::size_t rows, std::size_t cols, std::span<const std::uint8_t> pixels,
                      std::span<const std::uint8_t> labels, bool compress = false)
{
    if (pixels.size() != labels.size() * rows * cols) {
        throw std::invalid_argument("pixel buffer does not match label count and image shape");
    }
    const char* mode = compress ? "wb6" : "wbT";
    gzFile f = gzopen(images_path.string().c_str(), mode);
    if (f == nullptr) {
        throw RuntimeError("cannot write " + images_path.string());
    }
    detail::write_be32(f, idx_images_magic);
    detail::write_be32(f, static_cast<std::uint32_t>(labels.size()));
    detail::write_be32(f, static_cast<std::uint32_t>(rows));
    detail::write_be32(f, static_cast<std::uint32_t>(cols));
    if (!pixels.empty()) {
        gzwrite(f, pixels.data(), static_cast<unsigned>(pixels.size()));
    }
    gzclose(f);

    f = gzopen(labels_path.string().c_str(), mode);
    if (f == nullptr) {
        throw RuntimeError("cannot write " + labels_path.string());
    }
    detail::write_be32(f, idx_labels_magic);
    detail::write_be32(f, static_cast<std::uint32_t>(labels.size()));
    if (!labels.empty()) {
        gzwrite(f, labels.data(), static_cast<unsigned>(labels.size()));
    }
    gzclose(f);
}

} // namespace tacos
