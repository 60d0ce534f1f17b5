#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pslstm/rng.hpp"
#include "pslstm/tensor.hpp"

namespace pslstm {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RawSeries {
    std::string name;
    Tensor values;  // total_len x M
    std::vector<std::string> columns;
    std::vector<std::string> timestamps;  // empty when the file has no date column
    std::size_t dropped_rows = 0;

    std::size_t length() const { return values.dim(0); }
    std::size_t channels() const { return values.dim(1); }
};

struct CsvSchema {
    char delimiter = ',';
    bool date_column = true;  // first column holds timestamps and is dropped
    /// Header row present. Auto-detected when unset: a first row with any
    /// non-numeric value cell is treated as a header.
    std::optional<bool> header;
    std::size_t max_rows = 0;  // 0 reads every row
};

/// Reads a numeric matrix. Rows with an unparseable value are dropped and
/// counted; rows with the wrong number of fields are an error.
RawSeries load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

struct DatasetPreset {
    std::string name = "custom";
    SplitRatios ratios;
    std::size_t expected_channels = 0;  // 0: no expectation
};

/// custom, weather, electricity, solar, ettm1, ett, pems03.
DatasetPreset dataset_preset(const std::string& name);

enum class Split { train, val, test };
std::string to_string(Split s);

struct NormStats {
    Tensor mean;  // M
    Tensor std;   // M, strictly positive
};

/// Half-open row range [begin, end) of the standardized series.
struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

struct WindowOptions {
    std::size_t lookback = 96;
    std::size_t horizon = 24;
    std::size_t stride = 1;  // window start spacing
};

/// Sliding windows over a standardized series. A window starting at s has
/// history rows [s, s+L) and target rows [s+L, s+L+T). Targets never leave
/// their split; history may reach back into the previous split.
struct WindowedDataset {
    std::string name;
    Tensor series;  // standardized, total_len x M
    NormStats stats;
    std::size_t lookback = 0;
    std::size_t horizon = 0;
    RowRange train_rows, val_rows, test_rows;
    std::vector<std::size_t> train, val, test;  // window starts
    std::vector<std::string> warnings;

    std::size_t channels() const { return series.dim(1); }
    const std::vector<std::size_t>& windows(Split s) const;
    const RowRange& rows(Split s) const;

    struct Batch {
        Tensor x;  // B x L x M
        Tensor y;  // B x T x M
    };
    /// `positions` index into windows(split).
    Batch batch(Split split, std::span<const std::size_t> positions) const;
    Batch all(Split split) const;

    /// Content hash plus split metadata, for reproducibility audits.
    nlohmann::json digest() const;
};

WindowedDataset split_and_standardize(const RawSeries& raw, const DatasetPreset& preset, const WindowOptions& options);

enum class SyntheticKind { sinusoid, ar1, long_memory_arfima_like, constant };
SyntheticKind parse_synthetic_kind(const std::string& s);
std::string to_string(SyntheticKind k);

struct SyntheticParams {
    std::size_t length = 1000;
    std::size_t channels = 1;
    double period = 24.0;     // sinusoid
    double amplitude = 1.0;   // sinusoid
    double noise_std = 0.0;   // additive observation noise (sinusoid, constant)
    double phi = 0.8;         // ar1 coefficient
    double innovation_std = 1.0;  // ar1 / long-memory shocks
    double d = 0.3;           // fractional integration order, long-memory kind
    std::size_t ma_terms = 500;  // truncation of the long-memory MA expansion
    double value = 0.0;       // constant
    bool allow_nonstationary = false;
};

/// Channel c of a sinusoid is phase-shifted by 2*pi*c/channels, so channel 0
/// is exactly amplitude*sin(2*pi*t/period) when noise_std is 0.
RawSeries make_synthetic(SyntheticKind kind, const SyntheticParams& params, std::uint64_t seed);

}  // namespace pslstm
