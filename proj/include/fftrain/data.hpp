#pragma once

#include "fftrain/matrix.hpp"
#include "fftrain/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fftrain {

inline constexpr std::size_t kImageSide = 64;
inline constexpr std::size_t kImageChannels = 3;
/// Length of a flattened 64x64 RGB sample.
inline constexpr std::size_t kInputDim = kImageSide * kImageSide * kImageChannels;

/// Row-major pixels with interleaved channels; channel values on the 0..255 scale.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = kImageChannels;
    std::vector<double> values;

    Image() = default;
    Image(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
        : width(w), height(h), channels(c), values(w * h * c, fill)
    {}

    double& at(std::size_t x, std::size_t y, std::size_t c) { return values[(y * width + x) * channels + c]; }
    double at(std::size_t x, std::size_t y, std::size_t c) const { return values[(y * width + x) * channels + c]; }
};

struct LabeledImage {
    std::string filename;
    Image image;
    std::size_t label = 0;
};

struct RawDataset {
    std::vector<LabeledImage> items;
    std::vector<std::string> class_names;

    std::size_t class_count() const noexcept { return class_names.size(); }
};

enum class Normalization {
    unit_range,       // value / 255
    minmax_per_image, // (value - min) / (max - min) over the whole image; constant images map to 0
};

/// One flattened sample. `id` is the row index in the source labels file and
/// identifies the sample across splits.
struct Sample {
    Matrix pixels;
    std::size_t label = 0;
    std::size_t id = 0;
};

struct DatasetSplit {
    std::vector<Sample> train;
    std::vector<Sample> test;
    std::size_t class_count = 0;
    std::vector<std::string> class_names;

    /// FNV-1a over the ordered train ids, a separator, then the test ids.
    std::uint64_t membership_hash() const;
    std::size_t input_dim() const;
    /// Checks label ranges, uniform widths, disjointness of ids and [0,1] range.
    void validate() const;
};

struct OverlayBatch {
    Matrix positive;
    Matrix negative;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> negative_labels;
};

// ---------------------------------------------------------------------------
// Ingestion

/// Reads `labels_file` (header `filename,label`) and decodes each listed image
/// from `images_dir`, in file order. Label strings are indexed by first
/// appearance. The visitor form decodes one image at a time so large datasets
/// can be downsampled without holding every full-size image in memory.
using ImageVisitor = std::function<void(std::size_t row, LabeledImage&& item)>;
std::vector<std::string> visit_dataset(const std::filesystem::path& images_dir,
                                       const std::filesystem::path& labels_file,
                                       const ImageVisitor& visit);
RawDataset load_dataset(const std::filesystem::path& images_dir, const std::filesystem::path& labels_file);

/// Decodes PNG/JPEG into 1 or 3 channels (RGB order). Other layouts are rejected.
Image read_image(const std::filesystem::path& path);
/// Writes an 8-bit PNG; values are rounded and clamped to 0..255.
void write_png(const std::filesystem::path& path, const Image& image);

// ---------------------------------------------------------------------------
// Preprocessing

/// Bilinear resample onto 64x64 with half-pixel centres. Grayscale input is
/// promoted to three identical channels (with a warning).
Image downsample_to_64(const Image& image);

/// 64x64x3 image -> 1x12288 row. Layout: pixels in row-major order, RGB
/// interleaved, so pixel (x, y) channel c lands at (y*64 + x)*3 + c.
Matrix flatten_normalize(const Image& image, Normalization mode = Normalization::unit_range);
/// Inverse of the unit_range layout: rebuilds the 8-bit image (values rounded).
Image unflatten(const Matrix& row);

/// Downsample + flatten every item of a loaded dataset.
std::vector<Sample> prepare_samples(const RawDataset& raw, Normalization mode = Normalization::unit_range);
/// Streaming variant of load_dataset + prepare_samples for a dataset root
/// laid out as `<root>/images/*` and `<root>/labels.csv`.
struct PreparedDataset {
    std::vector<Sample> samples;
    std::vector<std::string> class_names;
};
PreparedDataset load_samples(const std::filesystem::path& root, Normalization mode = Normalization::unit_range);

/// Seeded shuffle, first ceil(0.8 N) samples to train, the rest to test.
DatasetSplit split_8_2(std::vector<Sample> samples, std::vector<std::string> class_names, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Label overlay

/// Copy of `x` whose first `n` components hold the one-hot code of `label`.
Matrix overlay_label(const Matrix& x, std::size_t label, std::size_t n);
/// In-place overlay of row i with labels[i].
void overlay_rows(Matrix& batch, std::span<const std::size_t> labels, std::size_t n);
/// In-place zeroing of the first n components of every row.
void neutral_overlay(Matrix& batch, std::size_t n);

/// Positive rows carry the true label, negative rows a label drawn uniformly
/// from the n-1 wrong ones.
OverlayBatch make_overlay_batch(std::span<const Sample> samples, std::size_t n, SeededRng& rng);
std::size_t draw_wrong_label(std::size_t true_label, std::size_t n, SeededRng& rng);

/// Stacks sample rows (in the order of `indices`, or all samples) into one matrix.
Matrix stack_pixels(std::span<const Sample> samples, std::span<const std::size_t> indices);
Matrix stack_pixels(std::span<const Sample> samples);
std::vector<std::size_t> collect_labels(std::span<const Sample> samples);
Matrix one_hot(std::span<const std::size_t> labels, std::size_t n);

// ---------------------------------------------------------------------------
// Synthetic fixture

/// Gaussian class blobs written into a small block of an otherwise black 64x64
/// image: `feature_dim` channel values starting at flat offset `feature_offset`
/// (which must leave room for the overlay region).
struct FixtureOptions {
    std::size_t classes = 3;
    std::size_t samples = 375;
    std::size_t feature_dim = 30;
    std::size_t feature_offset = 192;
    double spread = 0.06;
    double label_noise = 0.0;
    std::uint64_t seed = 0;
};

RawDataset make_fixture(const FixtureOptions& options);
/// Writes `<root>/images/*.png`, `<root>/labels.csv` and `<root>/classes.json`.
void write_dataset(const RawDataset& dataset, const std::filesystem::path& root);
void write_class_names(const std::filesystem::path& path, std::span<const std::string> class_names);

} // namespace fftrain
