#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <vector>

#include <gtest/gtest.h>
#include <zlib.h>

#include "tacos/encoding.hpp"
#include "tacos/idx.hpp"
#include "tacos/tasks.hpp"

using namespace tacos;
namespace fs = std::filesystem;

namespace {

class TempDir {
  public:
    TempDir()
    {
        path_ = fs::temp_directory_path() / ("tacos_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                             "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

  private:
    fs::path path_;
};

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes)
{
    std::ofstream os(p, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(std::uint32_t v)
{
    return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

std::vector<unsigned char> concat(std::initializer_list<std::vector<unsigned char>> parts)
{
    std::vector<unsigned char> out;
    for (const auto& p : parts) {
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

// Independent reader of the first `n` big-endian words of a gzip file.
std::vector<std::uint32_t> read_be_words(const fs::path& p, int n)
{
    gzFile f = gzopen(p.string().c_str(), "rb");
    std::vector<std::uint32_t> out;
    for (int i = 0; i < n; ++i) {
        unsigned char b[4];
        if (gzread(f, b, 4) != 4) {
            break;
        }
        out.push_back((std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3]);
    }
    gzclose(f);
    return out;
}

Dataset toy_dataset(const std::vector<std::uint8_t>& labels, std::size_t per_image = 4)
{
    Dataset d;
    d.rows = 2;
    d.cols = per_image / 2;
    d.labels = labels;
    d.pixels.assign(labels.size() * per_image, 0.5f);
    return d;
}

const fs::path subset_dir = fs::path(TACOS_SOURCE_DIR) / "data" / "mnist-subset";

} // namespace

TEST(Idx, RoundTripPlainAndGzip)
{
    TempDir tmp;
    const std::vector<std::uint8_t> pixels{0, 255, 128, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    const std::vector<std::uint8_t> labels{3, 7};
    for (bool gz : {false, true}) {
        const auto img = tmp.path() / (gz ? "i.gz" : "i");
        const auto lab = tmp.path() / (gz ? "l.gz" : "l");
        write_idx(img, lab, 2, 3, pixels, labels, gz);
        const auto ds = load_idx(img, lab);
        EXPECT_EQ(ds.size(), 2u);
        EXPECT_EQ(ds.rows, 2u);
        EXPECT_EQ(ds.cols, 3u);
        EXPECT_EQ(ds.labels, labels);
        ASSERT_EQ(ds.pixels.size(), pixels.size());
        for (std::size_t i = 0; i < pixels.size(); ++i) {
            EXPECT_EQ(ds.pixels[i], static_cast<float>(pixels[i]) / 255.0f);
            EXPECT_GE(ds.pixels[i], 0.0f);
            EXPECT_LE(ds.pixels[i], 1.0f);
        }
        EXPECT_EQ(ds.image(1)[0], 4.0f / 255.0f);
    }
}

TEST(Idx, AllZeroImage)
{
    TempDir tmp;
    write_idx(tmp.path() / "i", tmp.path() / "l", 4, 4, std::vector<std::uint8_t>(16, 0),
              std::vector<std::uint8_t>{1});
    const auto ds = load_idx(tmp.path() / "i", tmp.path() / "l");
    for (float x : ds.image(0)) {
        EXPECT_EQ(x, 0.0f);
    }
}

TEST(Idx, BadMagic)
{
    TempDir tmp;
    write_bytes(tmp.path() / "i", concat({be32(0x0802), be32(1), be32(1), be32(1), {0}}));
    write_bytes(tmp.path() / "l", concat({be32(idx_labels_magic), be32(1), {0}}));
    EXPECT_THROW(load_idx(tmp.path() / "i", tmp.path() / "l"), DataError);
    write_bytes(tmp.path() / "i", concat({be32(idx_images_magic), be32(1), be32(1), be32(1), {0}}));
    write_bytes(tmp.path() / "l", concat({be32(idx_images_magic), be32(1), {0}}));
    try {
        load_idx(tmp.path() / "i", tmp.path() / "l");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("label magic"), std::string::npos);
    }
}

TEST(Idx, Truncated)
{
    TempDir tmp;
    write_bytes(tmp.path() / "i", concat({be32(idx_images_magic), be32(2), be32(2), be32(2), {1, 2, 3}}));
    write_bytes(tmp.path() / "l", concat({be32(idx_labels_magic), be32(2), {0, 1}}));
    try {
        load_idx(tmp.path() / "i", tmp.path() / "l");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    }
}

TEST(Idx, CountMismatch)
{
    TempDir tmp;
    write_bytes(tmp.path() / "i", concat({be32(idx_images_magic), be32(2), be32(1), be32(1), {1, 2}}));
    write_bytes(tmp.path() / "l", concat({be32(idx_labels_magic), be32(3), {0, 1, 2}}));
    try {
        load_idx(tmp.path() / "i", tmp.path() / "l");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("does not match"), std::string::npos);
    }
}

TEST(Idx, MissingFile)
{
    EXPECT_THROW(load_idx("/nonexistent/i", "/nonexistent/l"), DataError);
}

TEST(Idx, BundledSubsetMatchesIndependentHeaderRead)
{
    for (const auto& [img, lab] : {std::pair{"train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"},
                                   std::pair{"t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"}}) {
        const auto header = read_be_words(subset_dir / img, 4);
        ASSERT_EQ(header.size(), 4u);
        EXPECT_EQ(header[0], idx_images_magic);
        const auto ds = load_idx(subset_dir / img, subset_dir / lab);
        EXPECT_EQ(ds.size(), header[1]);
        EXPECT_EQ(ds.rows, 28u);
        EXPECT_EQ(ds.cols, 28u);
        EXPECT_EQ(ds.rows, header[2]);
        EXPECT_EQ(ds.cols, header[3]);
        EXPECT_EQ(ds.pixels.size(), ds.size() * 784u);
        const std::set<std::uint8_t> classes(ds.labels.begin(), ds.labels.end());
        EXPECT_EQ(classes.size(), 10u);
    }
}

TEST(PoissonEncode, ZeroIntensityNeverSpikes)
{
    const SpikeEncoderConfig cfg;
    const std::vector<float> img(50, 0.0f);
    for (std::uint64_t t = 0; t < 2000; ++t) {
        const auto s = poisson_encode(img, cfg, 9, t);
        EXPECT_EQ(std::accumulate(s.begin(), s.end(), 0), 0);
    }
}

TEST(PoissonEncode, FullIntensityRate)
{
    SpikeEncoderConfig cfg;
    cfg.seed = 77;
    const std::vector<float> img{1.0f};
    std::size_t count = 0;
    const std::size_t n = 100000;
    for (std::uint64_t t = 0; t < n; ++t) {
        count += poisson_encode(img, cfg, 1, t)[0];
    }
    EXPECT_NEAR(static_cast<double>(count) / n, 0.25, 0.005);
}

TEST(PoissonEncode, RateScalesWithIntensityAndIsStationary)
{
    SpikeEncoderConfig cfg;
    cfg.seed = 5;
    const std::vector<float> img(100, 0.4f);
    std::array<std::size_t, 2> halves{};
    const std::size_t steps = 1000;
    for (std::uint64_t t = 0; t < steps; ++t) {
        const auto s = poisson_encode(img, cfg, 3, t);
        halves[t < steps / 2] += std::accumulate(s.begin(), s.end(), std::size_t{0});
    }
    const double per = 100.0 * steps / 2;
    EXPECT_NEAR(halves[0] / per, 0.1, 0.005);
    EXPECT_NEAR(halves[1] / per, 0.1, 0.005);
}

TEST(PoissonEncode, Deterministic)
{
    SpikeEncoderConfig cfg;
    cfg.seed = 12;
    std::vector<float> img(784);
    for (std::size_t i = 0; i < img.size(); ++i) {
        img[i] = static_cast<float>(i % 7) / 6.0f;
    }
    for (std::uint64_t t = 0; t < 20; ++t) {
        EXPECT_EQ(poisson_encode(img, cfg, 4, t), poisson_encode(img, cfg, 4, t));
    }
    EXPECT_NE(poisson_encode(img, cfg, 4, 0), poisson_encode(img, cfg, 5, 0));
    auto other = cfg;
    other.seed = 13;
    EXPECT_NE(poisson_encode(img, cfg, 4, 0), poisson_encode(img, other, 4, 0));
}

TEST(LabelEncode, TargetRateAndSilentOthers)
{
    SpikeEncoderConfig cfg;
    cfg.seed = 31;
    std::size_t count = 0;
    const std::size_t n = 100000;
    for (std::uint64_t t = 0; t < n; ++t) {
        const auto s = label_encode(1, 2, cfg, 8, t);
        EXPECT_EQ(s[0], 0);
        count += s[1];
    }
    EXPECT_NEAR(static_cast<double>(count) / n, 0.20, 0.005);
}

TEST(LabelEncode, ZeroRateIsSilent)
{
    SpikeEncoderConfig cfg;
    cfg.f_label = 0.0;
    for (std::uint64_t t = 0; t < 1000; ++t) {
        EXPECT_EQ(label_encode(0, 2, cfg, 1, t), (SpikeVector{0, 0}));
    }
    EXPECT_THROW(label_encode(2, 2, cfg, 1, 0), std::invalid_argument);
}

TEST(EncoderConfig, Validation)
{
    SpikeEncoderConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.steps_per_sample(), 100u);
    c.f_input = 2000;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.f_label = -1;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Orderings, Presets)
{
    EXPECT_EQ(ordering_preset(1), (std::vector<ClassPair>{{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}}));
    EXPECT_EQ(ordering_preset(4), (std::vector<ClassPair>{{0, 5}, {1, 7}, {4, 6}, {8, 9}, {3, 2}}));
    for (int k = 1; k <= 5; ++k) {
        std::set<int> all;
        for (const auto& p : ordering_preset(k)) {
            all.insert(p[0]);
            all.insert(p[1]);
        }
        EXPECT_EQ(all.size(), 10u);
    }
    EXPECT_THROW(ordering_preset(6), ConfigError);
}

TEST(SplitTasks, PartitionAndHeadMapping)
{
    std::vector<std::uint8_t> train_labels, test_labels;
    for (int i = 0; i < 200; ++i) {
        train_labels.push_back(static_cast<std::uint8_t>(i % 10));
    }
    for (int i = 0; i < 50; ++i) {
        test_labels.push_back(static_cast<std::uint8_t>((i * 3) % 10));
    }
    const auto train = toy_dataset(train_labels);
    const auto test = toy_dataset(test_labels);
    const auto seq = build_split_tasks(train, test, ordering_preset(4), 9);
    ASSERT_EQ(seq.size(), 5u);
    std::set<std::size_t> seen_train, seen_test;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        const auto& task = seq[t];
        EXPECT_EQ(task.train.size(), 40u);
        EXPECT_EQ(task.test.size(), 10u);
        EXPECT_TRUE(std::is_sorted(task.test.begin(), task.test.end()));
        EXPECT_FALSE(std::is_sorted(task.train.begin(), task.train.end()));
        std::array<int, 2> heads{};
        for (auto i : task.train) {
            EXPECT_TRUE(seen_train.insert(i).second);
            ++heads[task.head(train.labels[i])];
        }
        EXPECT_EQ(heads[0], 20);
        EXPECT_EQ(heads[1], 20);
        for (auto i : task.test) {
            EXPECT_TRUE(seen_test.insert(i).second);
        }
        EXPECT_EQ(task.head(task.classes[0]), 0u);
        EXPECT_EQ(task.head(task.classes[1]), 1u);
    }
    EXPECT_EQ(seen_train.size(), train.size());
    EXPECT_EQ(seen_test.size(), test.size());
    EXPECT_THROW((void)seq[0].head(9), std::invalid_argument);

    const auto again = build_split_tasks(train, test, ordering_preset(4), 9);
    for (std::size_t t = 0; t < 5; ++t) {
        EXPECT_EQ(again[t].train, seq[t].train);
    }
}

TEST(SplitTasks, CustomAndErrors)
{
    const auto ds = toy_dataset({0, 1, 2, 0, 1, 2});
    const auto one = build_split_tasks(ds, ds, {{0, 1}}, 1);
    EXPECT_EQ(one.size(), 1u);
    EXPECT_THROW(build_split_tasks(ds, ds, {{0, 1}, {1, 2}}, 1), ConfigError);
    EXPECT_THROW(build_split_tasks(ds, ds, {{0, 5}}, 1), DataError);
    EXPECT_THROW(build_split_tasks(ds, ds, {}, 1), ConfigError);
}

TEST(ReducedSubset, CountsAndDeterminism)
{
    std::vector<std::uint8_t> labels;
    for (int i = 0; i < 3000; ++i) {
        labels.push_back(static_cast<std::uint8_t>(i % 4 == 3 ? 1 : 0));
    }
    const auto train = toy_dataset(labels);
    const auto seq = build_split_tasks(train, train, {{0, 1}}, 2);
    const auto full = reduced_subset(seq, train, seq[0].train.size(), 1);
    EXPECT_EQ(full[0].train, seq[0].train);

    const auto a = reduced_subset(seq, train, 1000, 1);
    const auto b = reduced_subset(seq, train, 1000, 2);
    ASSERT_EQ(a[0].train.size(), 1000u);
    ASSERT_EQ(b[0].train.size(), 1000u);
    EXPECT_NE(a[0].train, b[0].train);
    EXPECT_EQ(a[0].test, seq[0].test);
    std::array<int, 2> heads{};
    const std::set<std::size_t> uniq(a[0].train.begin(), a[0].train.end());
    EXPECT_EQ(uniq.size(), 1000u);
    for (auto i : a[0].train) {
        ++heads[a[0].head(train.labels[i])];
        EXPECT_TRUE(std::find(seq[0].train.begin(), seq[0].train.end(), i) != seq[0].train.end());
    }
    EXPECT_EQ(heads[0], 500);
    EXPECT_EQ(heads[1], 500);
    EXPECT_EQ(reduced_subset(seq, train, 1000, 1)[0].train, a[0].train);

    EXPECT_THROW(reduced_subset(seq, train, 3001, 1), ConfigError);
    EXPECT_THROW(reduced_subset(seq, train, 2000, 1), ConfigError); // only 750 of class 1
}

TEST(ReducedSubset, BundledDataThousandPerTask)
{
    const auto train = load_idx(subset_dir / "train-images-idx3-ubyte.gz", subset_dir / "train-labels-idx1-ubyte.gz");
    const auto test = load_idx(subset_dir / "t10k-images-idx3-ubyte.gz", subset_dir / "t10k-labels-idx1-ubyte.gz");
    const auto seq = reduced_subset(build_split_tasks(train, test, ordering_preset(1), 1), train, 1000, 1);
    for (std::size_t t = 0; t < seq.size(); ++t) {
        EXPECT_EQ(seq[t].train.size(), 1000u);
        std::array<int, 2> heads{};
        for (auto i : seq[t].train) {
            ++heads[seq[t].head(train.labels[i])];
        }
        EXPECT_EQ(heads[0], 500);
        EXPECT_EQ(heads[1], 500);
    }
}

TEST(Rng, StreamsAreIndependentAndPortable)
{
    EXPECT_NE(rng::stream_seed(1, rng::Stream::input), rng::stream_seed(1, rng::Stream::label));
    EXPECT_NE(rng::stream_seed(1, rng::Stream::input), rng::stream_seed(2, rng::Stream::input));
    EXPECT_NE(rng::key(1, 2), rng::key(2, 1));
    // Reference SplitMix64 output for seed 0.
    rng::SplitMix64 g(0);
    EXPECT_EQ(g(), 0xe220a8397b1dcdafULL);
    EXPECT_EQ(g(), 0x6e789e6aa1b965f4ULL);
}

TEST(Rng, UniformAndBelow)
{
    rng::SplitMix64 g(99);
    double sum = 0.0;
    std::array<int, 7> hist{};
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
        const double u = g.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
        ++hist[g.below(7)];
    }
    EXPECT_NEAR(sum / n, 0.5, 0.01);
    for (int h : hist) {
        EXPECT_NEAR(h, n / 7, 400);
    }
    std::vector<int> v(20);
    std::iota(v.begin(), v.end(), 0);
    rng::shuffle(std::span<int>(v), g);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted[19], 19);
    EXPECT_NE(v, sorted);
}
