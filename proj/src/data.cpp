#include "fftrain/data.hpp"

#include "fftrain/error.hpp"
#include "fftrain/log.hpp"

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace fftrain {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(trim(std::string_view(line).substr(start, comma - start)));
        if (comma == std::string::npos) {
            break;
        }
        start = comma + 1;
    }
    return fields;
}

Image promote_to_rgb(const Image& image)
{
    if (image.channels == kImageChannels) {
        return image;
    }
    if (image.channels != 1) {
        throw DataError(fmt::format("expected an RGB image, got {} channels", image.channels));
    }
    log::warn("grayscale image promoted to three identical channels");
    Image rgb(image.width, image.height, kImageChannels);
    for (std::size_t i = 0; i < image.width * image.height; ++i) {
        for (std::size_t c = 0; c < kImageChannels; ++c) {
            rgb.values[i * kImageChannels + c] = image.values[i];
        }
    }
    return rgb;
}

struct Tap {
    std::size_t lo;
    std::size_t hi;
    double weight; // weight of `hi`
};

std::vector<Tap> bilinear_taps(std::size_t src, std::size_t dst)
{
    std::vector<Tap> taps(dst);
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    const double last = static_cast<double>(src - 1);
    for (std::size_t i = 0; i < dst; ++i) {
        const double pos = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, last);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        taps[i] = {lo, std::min(lo + 1, src - 1), pos - static_cast<double>(lo)};
    }
    return taps;
}

} // namespace

// ---------------------------------------------------------------------------

std::vector<std::string> visit_dataset(const fs::path& images_dir, const fs::path& labels_file,
                                       const ImageVisitor& visit)
{
    std::ifstream in(labels_file);
    if (!in) {
        throw DataError(fmt::format("cannot open labels file '{}'", labels_file.string()));
    }
    std::vector<std::string> class_names;
    std::map<std::string, std::size_t> class_index;

    std::string line;
    if (!std::getline(in, line)) {
        log::warn("labels file '{}' is empty; dataset has no samples", labels_file.string());
        return class_names;
    }
    const auto header = split_csv_line(line);
    if (header.size() != 2 || header[0] != "filename" || header[1] != "label") {
        throw DataError(fmt::format("'{}': expected header 'filename,label'", labels_file.string()));
    }

    std::size_t row = 0;
    std::size_t line_number = 1;
    while (std::getline(in, line)) {
        ++line_number;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split_csv_line(line);
        if (fields.size() != 2) {
            throw DataError(fmt::format("'{}' line {}: expected 2 columns, found {}",
                                        labels_file.string(), line_number, fields.size()));
        }
        const fs::path image_path = images_dir / fields[0];
        if (!fs::exists(image_path)) {
            throw DataError(fmt::format("'{}' line {}: image '{}' not found",
                                        labels_file.string(), line_number, fields[0]));
        }
        auto [it, inserted] = class_index.emplace(fields[1], class_names.size());
        if (inserted) {
            class_names.push_back(fields[1]);
        }
        LabeledImage item;
        item.filename = fields[0];
        item.label = it->second;
        try {
            item.image = read_image(image_path);
        } catch (const DataError& e) {
            throw DataError(fmt::format("'{}' line {} ({}): {}", labels_file.string(), line_number,
                                        fields[0], e.what()));
        }
        visit(row++, std::move(item));
    }
    if (row == 0) {
        log::warn("labels file '{}' lists no images", labels_file.string());
    }
    return class_names;
}

RawDataset load_dataset(const fs::path& images_dir, const fs::path& labels_file)
{
    RawDataset dataset;
    dataset.class_names = visit_dataset(images_dir, labels_file, [&](std::size_t, LabeledImage&& item) {
        dataset.items.push_back(std::move(item));
    });
    return dataset;
}

// ---------------------------------------------------------------------------

Image downsample_to_64(const Image& input)
{
    if (input.width == 0 || input.height == 0) {
        throw DataError("cannot resample an empty image");
    }
    if (input.values.size() != input.width * input.height * input.channels) {
        throw DataError("image buffer does not match its dimensions");
    }
    const Image image = promote_to_rgb(input);
    const auto xs = bilinear_taps(image.width, kImageSide);
    const auto ys = bilinear_taps(image.height, kImageSide);

    Image out(kImageSide, kImageSide, kImageChannels);
    for (std::size_t y = 0; y < kImageSide; ++y) {
        const Tap ty = ys[y];
        for (std::size_t x = 0; x < kImageSide; ++x) {
            const Tap tx = xs[x];
            for (std::size_t c = 0; c < kImageChannels; ++c) {
                const double top = (1.0 - tx.weight) * image.at(tx.lo, ty.lo, c) + tx.weight * image.at(tx.hi, ty.lo, c);
                const double bottom = (1.0 - tx.weight) * image.at(tx.lo, ty.hi, c) + tx.weight * image.at(tx.hi, ty.hi, c);
                out.at(x, y, c) = (1.0 - ty.weight) * top + ty.weight * bottom;
            }
        }
    }
    return out;
}

Matrix flatten_normalize(const Image& image, Normalization mode)
{
    if (image.width != kImageSide || image.height != kImageSide || image.channels != kImageChannels) {
        throw DataError(fmt::format("flatten_normalize expects 64x64x3, got {}x{}x{}",
                                    image.width, image.height, image.channels));
    }
    Matrix row(1, kInputDim);
    if (mode == Normalization::unit_range) {
        for (std::size_t i = 0; i < kInputDim; ++i) {
            row[i] = std::clamp(image.values[i] / 255.0, 0.0, 1.0);
        }
        return row;
    }
    const auto [lo, hi] = std::minmax_element(image.values.begin(), image.values.end());
    const double range = *hi - *lo;
    if (range > 0.0) {
        for (std::size_t i = 0; i < kInputDim; ++i) {
            row[i] = (image.values[i] - *lo) / range;
        }
    }
    return row;
}

Image unflatten(const Matrix& row)
{
    if (row.size() != kInputDim) {
        throw ShapeError(fmt::format("unflatten expects {} values, got {}", kInputDim, row.size()));
    }
    Image image(kImageSide, kImageSide, kImageChannels);
    for (std::size_t i = 0; i < kInputDim; ++i) {
        image.values[i] = std::round(std::clamp(row[i], 0.0, 1.0) * 255.0);
    }
    return image;
}

std::vector<Sample> prepare_samples(const RawDataset& raw, Normalization mode)
{
    std::vector<Sample> samples;
    samples.reserve(raw.items.size());
    for (std::size_t i = 0; i < raw.items.size(); ++i) {
        samples.push_back({flatten_normalize(downsample_to_64(raw.items[i].image), mode), raw.items[i].label, i});
    }
    return samples;
}

PreparedDataset load_samples(const fs::path& root, Normalization mode)
{
    PreparedDataset prepared;
    prepared.class_names = visit_dataset(root / "images", root / "labels.csv",
                                         [&](std::size_t row, LabeledImage&& item) {
        prepared.samples.push_back({flatten_normalize(downsample_to_64(item.image), mode), item.label, row});
    });
    return prepared;
}

// ---------------------------------------------------------------------------

std::uint64_t DatasetSplit::membership_hash() const
{
    std::uint64_t h = fnv1a64("");
    for (const auto& s : train) {
        h = fnv1a64(fmt::format("{},", s.id), h);
    }
    h = fnv1a64("|", h);
    for (const auto& s : test) {
        h = fnv1a64(fmt::format("{},", s.id), h);
    }
    return h;
}

std::size_t DatasetSplit::input_dim() const
{
    if (!train.empty()) {
        return train.front().pixels.cols();
    }
    return test.empty() ? 0 : test.front().pixels.cols();
}

void DatasetSplit::validate() const
{
    if (class_names.size() != class_count) {
        throw DataError(fmt::format("split has {} class names for {} classes", class_names.size(), class_count));
    }
    const std::size_t width = input_dim();
    std::set<std::size_t> ids;
    auto check = [&](const std::vector<Sample>& part, std::string_view name) {
        for (const auto& s : part) {
            if (s.label >= class_count) {
                throw DataError(fmt::format("{} sample {} has label {} but only {} classes", name, s.id, s.label, class_count));
            }
            if (s.pixels.rows() != 1 || s.pixels.cols() != width) {
                throw DataError(fmt::format("{} sample {} has shape {}, expected 1x{}", name, s.id,
                                            s.pixels.shape_string(), width));
            }
            if (!ids.insert(s.id).second) {
                throw DataError(fmt::format("sample id {} appears twice", s.id));
            }
            const auto v = s.pixels.values();
            if (std::any_of(v.begin(), v.end(), [](double x) { return !(x >= 0.0 && x <= 1.0); })) {
                throw DataError(fmt::format("{} sample {} has components outside [0,1]", name, s.id));
            }
        }
    };
    check(train, "train");
    check(test, "test");
}

DatasetSplit split_8_2(std::vector<Sample> samples, std::vector<std::string> class_names, std::uint64_t seed)
{
    if (samples.size() < 5) {
        throw DataError(fmt::format("an 8:2 split needs at least 5 samples, got {}", samples.size()));
    }
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SeededRng rng = SeededRng::stream(seed, "split");
    rng.shuffle(std::span<std::size_t>(order));

    const std::size_t train_count = (4 * samples.size() + 4) / 5; // ceil(0.8 N)
    DatasetSplit split;
    split.class_count = class_names.size();
    split.class_names = std::move(class_names);
    split.train.reserve(train_count);
    split.test.reserve(samples.size() - train_count);
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto& dest = i < train_count ? split.train : split.test;
        dest.push_back(std::move(samples[order[i]]));
    }
    split.validate();
    return split;
}

// ---------------------------------------------------------------------------

Matrix overlay_label(const Matrix& x, std::size_t label, std::size_t n)
{
    if (x.rows() != 1) {
        throw ShapeError(fmt::format("overlay_label expects a single row, got {}", x.shape_string()));
    }
    Matrix out = x;
    const std::size_t labels[] = {label};
    overlay_rows(out, labels, n);
    return out;
}

void overlay_rows(Matrix& batch, std::span<const std::size_t> labels, std::size_t n)
{
    if (labels.size() != batch.rows()) {
        throw ShapeError(fmt::format("overlay of {} labels onto {} rows", labels.size(), batch.rows()));
    }
    if (n > batch.cols()) {
        throw ShapeError(fmt::format("cannot overlay {} classes onto rows of width {}", n, batch.cols()));
    }
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        if (labels[r] >= n) {
            throw DataError(fmt::format("label {} out of range for {} classes", labels[r], n));
        }
        auto row = batch.row(r);
        std::fill_n(row.begin(), n, 0.0);
        row[labels[r]] = 1.0;
    }
}

void neutral_overlay(Matrix& batch, std::size_t n)
{
    if (n > batch.cols()) {
        throw ShapeError(fmt::format("cannot clear {} components of rows of width {}", n, batch.cols()));
    }
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        std::fill_n(batch.row(r).begin(), n, 0.0);
    }
}

std::size_t draw_wrong_label(std::size_t true_label, std::size_t n, SeededRng& rng)
{
    if (n < 2) {
        throw DataError("negative labels need at least 2 classes");
    }
    const auto draw = static_cast<std::size_t>(rng.below(n - 1));
    return draw < true_label ? draw : draw + 1;
}

OverlayBatch make_overlay_batch(std::span<const Sample> samples, std::size_t n, SeededRng& rng)
{
    if (n < 2) {
        throw DataError("overlay batches need at least 2 classes");
    }
    OverlayBatch batch;
    batch.labels = collect_labels(samples);
    batch.negative_labels.reserve(samples.size());
    for (const std::size_t label : batch.labels) {
        batch.negative_labels.push_back(draw_wrong_label(label, n, rng));
    }
    batch.positive = stack_pixels(samples);
    batch.negative = batch.positive;
    overlay_rows(batch.positive, batch.labels, n);
    overlay_rows(batch.negative, batch.negative_labels, n);
    return batch;
}

Matrix stack_pixels(std::span<const Sample> samples, std::span<const std::size_t> indices)
{
    if (samples.empty() || indices.empty()) {
        return Matrix(0, samples.empty() ? 0 : samples.front().pixels.cols());
    }
    const std::size_t width = samples.front().pixels.cols();
    Matrix out(indices.size(), width);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto& px = samples[indices[r]].pixels;
        if (px.cols() != width) {
            throw ShapeError("samples of different widths in one batch");
        }
        std::copy(px.values().begin(), px.values().end(), out.row(r).begin());
    }
    return out;
}

Matrix stack_pixels(std::span<const Sample> samples)
{
    std::vector<std::size_t> all(samples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return stack_pixels(samples, all);
}

std::vector<std::size_t> collect_labels(std::span<const Sample> samples)
{
    std::vector<std::size_t> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) {
        labels.push_back(s.label);
    }
    return labels;
}

Matrix one_hot(std::span<const std::size_t> labels, std::size_t n)
{
    Matrix out(labels.size(), n);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] >= n) {
            throw DataError(fmt::format("label {} out of range for {} classes", labels[r], n));
        }
        out(r, labels[r]) = 1.0;
    }
    return out;
}

// ---------------------------------------------------------------------------

RawDataset make_fixture(const FixtureOptions& options)
{
    if (options.classes < 2) {
        throw DataError("a fixture needs at least 2 classes");
    }
    if (options.feature_offset < options.classes || options.feature_offset + options.feature_dim > kInputDim) {
        throw DataError(fmt::format("feature block [{}, {}) must sit after the {}-class overlay and inside {} components",
                                    options.feature_offset, options.feature_offset + options.feature_dim,
                                    options.classes, kInputDim));
    }
    if (options.label_noise < 0.0 || options.label_noise > 1.0) {
        throw DataError("label_noise must be in [0, 1]");
    }

    SeededRng means_rng = SeededRng::stream(options.seed, "fixture/means");
    std::vector<std::vector<double>> means(options.classes, std::vector<double>(options.feature_dim));
    for (auto& mean : means) {
        for (double& m : mean) {
            m = 0.2 + 0.6 * means_rng.uniform();
        }
    }

    SeededRng sample_rng = SeededRng::stream(options.seed, "fixture/samples");
    SeededRng noise_rng = SeededRng::stream(options.seed, "fixture/label-noise");
    RawDataset dataset;
    for (std::size_t c = 0; c < options.classes; ++c) {
        dataset.class_names.push_back(fmt::format("class_{}", c));
    }
    dataset.items.reserve(options.samples);
    for (std::size_t i = 0; i < options.samples; ++i) {
        const std::size_t cls = i % options.classes;
        Image image(kImageSide, kImageSide, kImageChannels);
        for (std::size_t d = 0; d < options.feature_dim; ++d) {
            const double v = std::clamp(means[cls][d] + options.spread * sample_rng.normal(), 0.0, 1.0);
            image.values[options.feature_offset + d] = std::round(v * 255.0);
        }
        std::size_t label = cls;
        if (options.label_noise > 0.0 && noise_rng.uniform() < options.label_noise) {
            label = draw_wrong_label(cls, options.classes, noise_rng);
        }
        dataset.items.push_back({fmt::format("img_{:05}.png", i), std::move(image), label});
    }
    // Re-index classes by first appearance so the in-memory dataset matches
    // what load_dataset produces from the written files.
    std::vector<std::size_t> remap(options.classes, options.classes);
    std::vector<std::string> ordered;
    for (auto& item : dataset.items) {
        if (remap[item.label] == options.classes) {
            remap[item.label] = ordered.size();
            ordered.push_back(dataset.class_names[item.label]);
        }
        item.label = remap[item.label];
    }
    dataset.class_names = std::move(ordered);
    return dataset;
}

void write_class_names(const fs::path& path, std::span<const std::string> class_names)
{
    std::ofstream out(path);
    if (!out) {
        throw DataError(fmt::format("cannot write '{}'", path.string()));
    }
    out << nlohmann::json(std::vector<std::string>(class_names.begin(), class_names.end())).dump(2) << '\n';
}

void write_dataset(const RawDataset& dataset, const fs::path& root)
{
    fs::create_directories(root / "images");
    std::ofstream csv(root / "labels.csv");
    if (!csv) {
        throw DataError(fmt::format("cannot write '{}'", (root / "labels.csv").string()));
    }
    csv << "filename,label\n";
    for (const auto& item : dataset.items) {
        write_png(root / "images" / item.filename, item.image);
        csv << item.filename << ',' << dataset.class_names.at(item.label) << '\n';
    }
    write_class_names(root / "classes.json", dataset.class_names);
}

} // namespace fftrain
