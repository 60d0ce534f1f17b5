#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "pslstm/data.hpp"

using namespace pslstm;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const std::string& name, const std::string& text) {
    const fs::path p = fs::temp_directory_path() / name;
    std::ofstream(p) << text;
    return p;
}

RawSeries ramp(std::size_t len, std::size_t channels) {
    RawSeries r;
    r.name = "ramp";
    r.values = Tensor({len, channels});
    for (std::size_t t = 0; t < len; ++t)
        for (std::size_t m = 0; m < channels; ++m) r.values(t, m) = std::sin(0.05 * t * (m + 1)) + 0.01 * t;
    return r;
}

}  // namespace

TEST(LoadCsv, HeaderDateColumnAndDroppedRows) {
    const auto p = write_file("pslstm_data_a.csv",
                              "date,a,b\n2020-01-01,1.0,2.0\n2020-01-02,NaNx,3.0\n2020-01-03,4.5,-1e2\n");
    const RawSeries r = load_csv(p);
    EXPECT_EQ(r.length(), 2u);
    EXPECT_EQ(r.channels(), 2u);
    EXPECT_EQ(r.dropped_rows, 1u);
    EXPECT_EQ(r.columns, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(r.timestamps.back(), "2020-01-03");
    EXPECT_EQ(r.values(1, 1), -100.0);
    fs::remove(p);
}

TEST(LoadCsv, HeaderlessWithoutDateColumn) {
    const auto p = write_file("pslstm_data_b.csv", "1,2\n3,4\n5,6\n");
    CsvSchema s;
    s.date_column = false;
    const RawSeries r = load_csv(p, s);
    EXPECT_EQ(r.length(), 3u);
    EXPECT_EQ(r.values(2, 0), 5.0);
    s.max_rows = 2;
    EXPECT_EQ(load_csv(p, s).length(), 2u);
    fs::remove(p);
}

TEST(LoadCsv, RaggedRowIsAnError) {
    const auto p = write_file("pslstm_data_c.csv", "date,a,b\nx,1,2\ny,3\n");
    EXPECT_THROW(load_csv(p), DataError);
    fs::remove(p);
}

TEST(LoadCsv, MissingFileNamesPath) {
    try {
        load_csv("/no/such/dir/weather.csv");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("/no/such/dir/weather.csv"), std::string::npos);
    }
}

TEST(Presets, RatiosAndChannels) {
    EXPECT_EQ(dataset_preset("weather").expected_channels, 21u);
    EXPECT_EQ(dataset_preset("ettm1").ratios.train, 0.6);
    EXPECT_EQ(dataset_preset("custom").ratios.val, 0.1);
    EXPECT_THROW(dataset_preset("imaginary"), std::invalid_argument);
}

TEST(Split, WindowCountsMatchEnumerationOracle) {
    const RawSeries raw = ramp(1000, 2);
    const WindowedDataset ds = split_and_standardize(raw, dataset_preset("custom"), {96, 24, 1});
    const std::size_t bounds[4] = {0, 700, 800, 1000};
    for (int s = 0; s < 3; ++s) {
        std::vector<std::size_t> expected;
        for (std::size_t start = 0; start + 96 + 24 <= 1000; ++start) {
            const std::size_t t0 = start + 96, t1 = start + 96 + 24;
            if (t0 >= bounds[s] && t1 <= bounds[s + 1]) expected.push_back(start);
        }
        EXPECT_EQ(ds.windows(static_cast<Split>(s)), expected) << "split " << s;
    }
    EXPECT_EQ(ds.train.size(), 581u);
    EXPECT_EQ(ds.val.size(), 77u);
    EXPECT_EQ(ds.test.size(), 177u);
}

TEST(Split, StrideThinsWindows) {
    const WindowedDataset ds = split_and_standardize(ramp(1000, 1), dataset_preset("custom"), {96, 24, 10});
    EXPECT_EQ(ds.train.size(), 59u);
    EXPECT_EQ(ds.train[1] - ds.train[0], 10u);
}

TEST(Split, TrainStatisticsAreStandard) {
    const WindowedDataset ds = split_and_standardize(ramp(1000, 3), dataset_preset("custom"), {96, 24, 1});
    for (std::size_t m = 0; m < 3; ++m) {
        double mu = 0.0, var = 0.0;
        for (std::size_t t = 0; t < 700; ++t) mu += ds.series(t, m);
        mu /= 700;
        for (std::size_t t = 0; t < 700; ++t) var += (ds.series(t, m) - mu) * (ds.series(t, m) - mu);
        var /= 700;
        EXPECT_NEAR(mu, 0.0, 1e-10);
        EXPECT_NEAR(var, 1.0, 1e-10);
    }
}

TEST(Split, NoLeakageFromLaterRows) {
    RawSeries raw = ramp(1000, 1);
    const WindowedDataset a = split_and_standardize(raw, dataset_preset("custom"), {96, 24, 1});
    for (std::size_t t = 700; t < 1000; ++t) raw.values(t, 0) += 1000.0;
    const WindowedDataset b = split_and_standardize(raw, dataset_preset("custom"), {96, 24, 1});
    EXPECT_EQ(a.stats.mean, b.stats.mean);
    EXPECT_EQ(a.stats.std, b.stats.std);
    raw.values(10, 0) += 1.0;
    const WindowedDataset c = split_and_standardize(raw, dataset_preset("custom"), {96, 24, 1});
    EXPECT_NE(a.stats.mean, c.stats.mean);
}

TEST(Split, ConstantChannelFallsBackToUnitStd) {
    RawSeries raw = ramp(500, 2);
    for (std::size_t t = 0; t < 500; ++t) raw.values(t, 1) = 7.0;
    const WindowedDataset ds = split_and_standardize(raw, dataset_preset("custom"), {32, 8, 1});
    EXPECT_EQ(ds.stats.std[1], 1.0);
    EXPECT_EQ(ds.series(123, 1), 0.0);
    EXPECT_FALSE(ds.warnings.empty());
}

TEST(Split, ChannelMismatchWarnsOnly) {
    const WindowedDataset ds = split_and_standardize(ramp(500, 2), dataset_preset("weather"), {32, 8, 1});
    ASSERT_FALSE(ds.warnings.empty());
    EXPECT_NE(ds.warnings[0].find("21"), std::string::npos);
}

TEST(Split, TooShortSeriesIsAnError) {
    EXPECT_THROW(split_and_standardize(ramp(100, 1), dataset_preset("custom"), {96, 24, 1}), DataError);
}

TEST(Windows, TargetFollowsHistory) {
    const WindowedDataset ds = split_and_standardize(ramp(600, 2), dataset_preset("custom"), {32, 8, 1});
    for (Split s : {Split::train, Split::val, Split::test}) {
        const auto batch = ds.all(s);
        const auto& w = ds.windows(s);
        for (std::size_t k = 0; k < w.size(); k += 7) {
            for (std::size_t m = 0; m < 2; ++m) {
                EXPECT_EQ(batch.x(k, 31, m), ds.series(w[k] + 31, m));
                EXPECT_EQ(batch.y(k, 0, m), ds.series(w[k] + 32, m));
                EXPECT_EQ(batch.y(k, 7, m), ds.series(w[k] + 39, m));
            }
        }
    }
}

TEST(Windows, DigestIsDeterministic) {
    const auto a = split_and_standardize(ramp(600, 2), dataset_preset("custom"), {32, 8, 1}).digest();
    const auto b = split_and_standardize(ramp(600, 2), dataset_preset("custom"), {32, 8, 1}).digest();
    EXPECT_EQ(a.dump(), b.dump());
    RawSeries r = ramp(600, 2);
    r.values(0, 0) += 1e-9;
    EXPECT_NE(split_and_standardize(r, dataset_preset("custom"), {32, 8, 1}).digest()["digest"], a["digest"]);
}

TEST(Synthetic, ConstantAndNoiselessSinusoid) {
    SyntheticParams p;
    p.length = 100;
    p.value = 3.0;
    const RawSeries c = make_synthetic(SyntheticKind::constant, p, 1);
    for (double v : c.values.data()) EXPECT_EQ(v, 3.0);
    p.period = 24.0;
    p.amplitude = 1.0;
    const RawSeries s = make_synthetic(SyntheticKind::sinusoid, p, 1);
    for (std::size_t t = 0; t < 100; ++t) EXPECT_NEAR(s.values(t, 0), std::sin(2 * M_PI * t / 24.0), 1e-15);
}

TEST(Synthetic, Ar1LagOneAutocorrelation) {
    SyntheticParams p;
    p.length = 100000;
    p.phi = 0.8;
    const RawSeries r = make_synthetic(SyntheticKind::ar1, p, 7);
    const auto& v = r.values;
    double mu = 0.0;
    for (double x : v.data()) mu += x;
    mu /= static_cast<double>(v.size());
    double c0 = 0.0, c1 = 0.0;
    for (std::size_t t = 0; t < v.size(); ++t) {
        c0 += (v[t] - mu) * (v[t] - mu);
        if (t + 1 < v.size()) c1 += (v[t] - mu) * (v[t + 1] - mu);
    }
    EXPECT_NEAR(c1 / c0, 0.8, 0.02);
}

TEST(Synthetic, NonStationaryAr1Rejected) {
    SyntheticParams p;
    p.phi = 1.0;
    EXPECT_THROW(make_synthetic(SyntheticKind::ar1, p, 1), std::invalid_argument);
    p.allow_nonstationary = true;
    p.length = 50;
    EXPECT_NO_THROW(make_synthetic(SyntheticKind::ar1, p, 1));
}

TEST(Synthetic, DeterministicGivenSeed) {
    SyntheticParams p;
    p.length = 300;
    p.channels = 3;
    p.noise_std = 0.2;
    for (auto kind : {SyntheticKind::sinusoid, SyntheticKind::ar1, SyntheticKind::long_memory_arfima_like}) {
        EXPECT_EQ(make_synthetic(kind, p, 5).values, make_synthetic(kind, p, 5).values);
        EXPECT_NE(make_synthetic(kind, p, 5).values, make_synthetic(kind, p, 6).values);
    }
}
