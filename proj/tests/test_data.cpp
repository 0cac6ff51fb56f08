#include "support.hpp"

#include "fftrain/data.hpp"
#include "fftrain/error.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <string>

using namespace fftrain;
namespace fs = std::filesystem;

namespace {

Image solid(std::size_t w, std::size_t h, double r, double g, double b)
{
    Image img(w, h, 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            img.at(x, y, 0) = r;
            img.at(x, y, 1) = g;
            img.at(x, y, 2) = b;
        }
    }
    return img;
}

void write_labels(const fs::path& path, const std::string& body)
{
    std::ofstream(path) << body;
}

std::vector<Sample> numbered_samples(std::size_t count)
{
    std::vector<Sample> out;
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(Sample{Matrix(1, 4, 0.5), i % 2, i});
    }
    return out;
}

} // namespace

TEST_CASE("load_dataset indexes labels by first appearance")
{
    testing::ScratchDir dir("load");
    fs::create_directories(dir / "images");
    for (const char* name : {"a.png", "b.png", "c.png"}) {
        write_png(dir.path() / "images" / name, solid(5, 4, 10, 20, 30));
    }
    write_labels(dir / "labels.csv", "filename,label\na.png,benign\nb.png,malign\nc.png,benign\n");
    const RawDataset raw = load_dataset(dir / "images", dir / "labels.csv");
    CHECK(raw.class_count() == 2);
    REQUIRE(raw.items.size() == 3);
    CHECK(raw.items[0].label == 0);
    CHECK(raw.items[1].label == 1);
    CHECK(raw.items[2].label == 0);
    CHECK(raw.class_names == std::vector<std::string>{"benign", "malign"});
    CHECK(raw.items[1].filename == "b.png");
    CHECK(raw.items[0].image.width == 5);
    CHECK(raw.items[0].image.at(4, 3, 2) == 30.0);
}

TEST_CASE("load_dataset on an empty labels file")
{
    testing::ScratchDir dir("empty");
    fs::create_directories(dir / "images");
    write_labels(dir / "labels.csv", "");
    const RawDataset raw = load_dataset(dir / "images", dir / "labels.csv");
    CHECK(raw.items.empty());
    CHECK(raw.class_count() == 0);

    write_labels(dir / "labels.csv", "filename,label\n");
    CHECK(load_dataset(dir / "images", dir / "labels.csv").items.empty());
}

TEST_CASE("load_dataset errors name the offending row")
{
    testing::ScratchDir dir("bad");
    fs::create_directories(dir / "images");
    write_png(dir.path() / "images" / "a.png", solid(2, 2, 0, 0, 0));
    write_labels(dir / "labels.csv", "filename,label\na.png,x\nmissing.png,y\n");
    try {
        (void)load_dataset(dir / "images", dir / "labels.csv");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("missing.png") != std::string::npos);
    }

    write_labels(dir / "labels.csv", "filename,label\na.png,x,extra\n");
    CHECK_THROWS_AS((void)load_dataset(dir / "images", dir / "labels.csv"), DataError);

    std::ofstream(dir / "images" / "junk.png") << "not an image";
    write_labels(dir / "labels.csv", "filename,label\njunk.png,x\n");
    try {
        (void)load_dataset(dir / "images", dir / "labels.csv");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("junk.png") != std::string::npos);
    }
    CHECK_THROWS_AS((void)load_dataset(dir / "images", dir / "nope.csv"), DataError);
}

TEST_CASE("downsample examples")
{
    SeededRng rng(1);
    Image img(64, 64, 3);
    for (double& v : img.values) {
        v = std::round(255.0 * rng.uniform());
    }
    const Image same = downsample_to_64(img);
    REQUIRE(same.values.size() == img.values.size());
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        CHECK(std::abs(same.values[i] - img.values[i]) <= 1e-12);
    }

    for (const auto& [w, h] : {std::pair<std::size_t, std::size_t>{1, 1}, {17, 230}, {300, 200}}) {
        const Image out = downsample_to_64(solid(w, h, 12, 200, 77));
        CHECK(out.width == 64);
        CHECK(out.height == 64);
        bool constant = true;
        for (std::size_t y = 0; y < 64; ++y) {
            for (std::size_t x = 0; x < 64; ++x) {
                constant = constant && std::abs(out.at(x, y, 0) - 12) <= 1e-9
                        && std::abs(out.at(x, y, 1) - 200) <= 1e-9 && std::abs(out.at(x, y, 2) - 77) <= 1e-9;
            }
        }
        CHECK(constant);
    }

    // Each output centre falls midway between two texels of opposite colour.
    Image board(128, 128, 3);
    for (std::size_t y = 0; y < 128; ++y) {
        for (std::size_t x = 0; x < 128; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                board.at(x, y, c) = (x + y) % 2 == 0 ? 255.0 : 0.0;
            }
        }
    }
    const Image gray = downsample_to_64(board);
    for (double v : gray.values) {
        CHECK(std::abs(v - 127.5) <= 1e-9);
    }
}

TEST_CASE("grayscale input is promoted, other layouts rejected")
{
    Image g(10, 10, 1, 40.0);
    const Image out = downsample_to_64(g);
    CHECK(out.channels == 3);
    CHECK(out.at(5, 5, 2) == doctest::Approx(40.0));
    CHECK_THROWS_AS((void)downsample_to_64(Image(4, 4, 4)), DataError);
}

TEST_CASE("flatten_normalize layout")
{
    CHECK(flatten_normalize(Image(64, 64, 3, 0.0)) == Matrix(1, kInputDim));
    CHECK(flatten_normalize(Image(64, 64, 3, 255.0)) == Matrix(1, kInputDim, 1.0));

    Image img(64, 64, 3);
    img.at(0, 0, 0) = 255;
    img.at(0, 0, 1) = 0;
    img.at(0, 0, 2) = 128;
    img.at(5, 2, 1) = 51;
    const Matrix flat = flatten_normalize(img);
    CHECK(flat.cols() == kInputDim);
    CHECK(flat[0] == 1.0);
    CHECK(flat[1] == 0.0);
    CHECK(flat[2] == 128.0 / 255.0);
    CHECK(std::abs(flat[2] - 0.50196078431372548) <= 1e-15);
    CHECK(flat[(2 * 64 + 5) * 3 + 1] == 0.2);
}

TEST_CASE("flatten round-trips every pixel value")
{
    SeededRng rng(2);
    Image img(64, 64, 3);
    for (double& v : img.values) {
        v = static_cast<double>(rng.below(256));
    }
    const Image back = unflatten(flatten_normalize(img));
    CHECK(back.values == img.values);
}

TEST_CASE("minmax normalization")
{
    Image img(64, 64, 3, 50.0);
    img.at(3, 3, 0) = 150.0;
    const Matrix flat = flatten_normalize(img, Normalization::minmax_per_image);
    CHECK(flat[(3 * 64 + 3) * 3] == 1.0);
    CHECK(flat[0] == 0.0);
    CHECK(flatten_normalize(Image(64, 64, 3, 9.0), Normalization::minmax_per_image) == Matrix(1, kInputDim));
}

TEST_CASE("split_8_2 sizes and determinism")
{
    const std::vector<std::string> names{"a", "b"};
    const DatasetSplit ten = split_8_2(numbered_samples(10), names, 7);
    CHECK(ten.train.size() == 8);
    CHECK(ten.test.size() == 2);
    const DatasetSplit five = split_8_2(numbered_samples(5), names, 7);
    CHECK(five.train.size() == 4);
    CHECK(five.test.size() == 1);
    CHECK(split_8_2(numbered_samples(11), names, 7).train.size() == 9);
    CHECK_THROWS_AS((void)split_8_2(numbered_samples(4), names, 7), DataError);

    const DatasetSplit again = split_8_2(numbered_samples(10), names, 7);
    CHECK(again.membership_hash() == ten.membership_hash());
    for (std::size_t i = 0; i < ten.train.size(); ++i) {
        CHECK(again.train[i].id == ten.train[i].id);
    }
    CHECK(split_8_2(numbered_samples(10), names, 8).membership_hash() != ten.membership_hash());

    std::set<std::size_t> ids;
    for (const auto& s : ten.train) {
        ids.insert(s.id);
    }
    for (const auto& s : ten.test) {
        CHECK(ids.count(s.id) == 0);
        ids.insert(s.id);
    }
    CHECK(ids.size() == 10);
}

TEST_CASE("split validation rejects bad samples")
{
    DatasetSplit split;
    split.class_count = 2;
    split.class_names = {"a", "b"};
    split.train.push_back(Sample{Matrix(1, 3, 0.5), 0, 0});
    split.test.push_back(Sample{Matrix(1, 3, 0.5), 1, 1});
    CHECK_NOTHROW(split.validate());
    split.test[0].label = 2;
    CHECK_THROWS_AS(split.validate(), DataError);
    split.test[0].label = 1;
    split.test[0].id = 0;
    CHECK_THROWS_AS(split.validate(), DataError);
    split.test[0].id = 1;
    split.test[0].pixels[0] = 1.5;
    CHECK_THROWS_AS(split.validate(), DataError);
}

TEST_CASE("overlay_label examples")
{
    const Matrix x(1, 20, 0.5);
    const Matrix seven = overlay_label(x, 1, 7);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(seven[i] == (i == 1 ? 1.0 : 0.0));
    }
    for (std::size_t i = 7; i < 20; ++i) {
        CHECK(seven[i] == 0.5);
    }

    const Matrix two = overlay_label(x, 0, 2);
    CHECK(two[0] == 1.0);
    CHECK(two[1] == 0.0);
    CHECK(two[2] == 0.5);
    CHECK(two[19] == 0.5);

    SeededRng rng(4);
    for (int t = 0; t < 50; ++t) {
        const Matrix r = testing::random_matrix(1, 30, rng, 0, 1);
        const auto a = rng.below(9);
        const auto b = rng.below(9);
        CHECK(bitwise_equal(overlay_label(overlay_label(r, a, 9), b, 9), overlay_label(r, b, 9)));
    }
    CHECK_THROWS_AS((void)overlay_label(x, 7, 7), DataError);
}

TEST_CASE("overlay batches")
{
    SeededRng rng(5);
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < 40; ++i) {
        samples.push_back(Sample{testing::random_matrix(1, 25, rng, 0, 1), i % 7, i});
    }
    const OverlayBatch batch = make_overlay_batch(samples, 7, rng);
    REQUIRE(batch.positive.rows() == 40);
    for (std::size_t r = 0; r < 40; ++r) {
        CHECK(batch.labels[r] == samples[r].label);
        CHECK(batch.negative_labels[r] != batch.labels[r]);
        for (std::size_t c = 0; c < 7; ++c) {
            CHECK(batch.positive(r, c) == (c == batch.labels[r] ? 1.0 : 0.0));
            CHECK(batch.negative(r, c) == (c == batch.negative_labels[r] ? 1.0 : 0.0));
        }
        for (std::size_t c = 7; c < 25; ++c) {
            CHECK(batch.positive(r, c) == samples[r].pixels[c]);
            CHECK(batch.negative(r, c) == samples[r].pixels[c]);
        }
    }

    std::vector<Sample> zeros(10, Sample{Matrix(1, 5), 0, 0});
    const OverlayBatch forced = make_overlay_batch(zeros, 2, rng);
    for (std::size_t label : forced.negative_labels) {
        CHECK(label == 1);
    }
    CHECK_THROWS_AS((void)make_overlay_batch(zeros, 1, rng), DataError);
}

TEST_CASE("wrong labels are uniform over the other classes")
{
    SeededRng rng(6);
    const int draws = 10000;
    for (std::size_t truth : {std::size_t{0}, std::size_t{3}, std::size_t{6}}) {
        std::vector<int> counts(7, 0);
        for (int i = 0; i < draws; ++i) {
            ++counts[draw_wrong_label(truth, 7, rng)];
        }
        CHECK(counts[truth] == 0);
        for (std::size_t c = 0; c < 7; ++c) {
            if (c != truth) {
                CHECK(std::abs(counts[c] / static_cast<double>(draws) - 1.0 / 6.0) <= 0.02);
            }
        }
    }
}

TEST_CASE("neutral overlay and stacking helpers")
{
    Matrix batch{{1, 1, 0.3}, {0, 1, 0.4}};
    neutral_overlay(batch, 2);
    CHECK(batch == Matrix{{0, 0, 0.3}, {0, 0, 0.4}});
    const std::vector<std::size_t> labels{1, 0};
    overlay_rows(batch, labels, 2);
    CHECK(batch == Matrix{{0, 1, 0.3}, {1, 0, 0.4}});
    CHECK(one_hot(labels, 3) == Matrix{{0, 1, 0}, {1, 0, 0}});
}

TEST_CASE("png round trip")
{
    testing::ScratchDir dir("png");
    SeededRng rng(8);
    Image img(9, 7, 3);
    for (double& v : img.values) {
        v = static_cast<double>(rng.below(256));
    }
    write_png(dir / "x.png", img);
    const Image back = read_image(dir / "x.png");
    CHECK(back.width == 9);
    CHECK(back.height == 7);
    CHECK(back.values == img.values);
}

TEST_CASE("fixture written and reloaded matches the in-memory samples")
{
    testing::ScratchDir dir("fixture");
    FixtureOptions options;
    options.classes = 3;
    options.samples = 12;
    const RawDataset raw = make_fixture(options);
    write_dataset(raw, dir.path());
    const PreparedDataset loaded = load_samples(dir.path());
    const std::vector<Sample> direct = prepare_samples(raw);
    REQUIRE(loaded.samples.size() == 12);
    CHECK(loaded.class_names == raw.class_names);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(loaded.samples[i].label == direct[i].label);
        CHECK(loaded.samples[i].id == i);
        CHECK(bitwise_equal(loaded.samples[i].pixels, direct[i].pixels));
        for (std::size_t c = 0; c < options.feature_offset; ++c) {
            REQUIRE(loaded.samples[i].pixels[c] == 0.0);
        }
    }
    CHECK(fs::exists(dir / "classes.json"));
}
