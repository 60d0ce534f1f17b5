#include "pslstm/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace pslstm {

namespace {

std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == delim) {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\"");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\"");
    return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& field, double& out) {
    const std::string s = trim(field);
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

RawSeries load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file '" + path.string() + "'");
    RawSeries raw;
    raw.name = path.stem().string();

    std::string line;
    std::vector<double> values;
    std::size_t width = 0;
    std::size_t rows = 0;
    std::size_t line_no = 0;
    const std::size_t first_value = schema.date_column ? 1 : 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split_fields(line, schema.delimiter);
        if (first) {
            first = false;
            width = fields.size();
            if (width <= first_value) {
                throw DataError("'" + path.string() + "' has no value columns");
            }
            bool header = false;
            if (schema.header.has_value()) {
                header = *schema.header;
            } else {
                double tmp;
                for (std::size_t c = first_value; c < fields.size(); ++c)
                    if (!parse_double(fields[c], tmp)) header = true;
            }
            if (header) {
                for (std::size_t c = first_value; c < fields.size(); ++c) raw.columns.push_back(trim(fields[c]));
                continue;
            }
            for (std::size_t c = first_value; c < fields.size(); ++c) raw.columns.push_back("c" + std::to_string(c));
        }
        if (fields.size() != width) {
            throw DataError("'" + path.string() + "' line " + std::to_string(line_no) + ": expected " +
                            std::to_string(width) + " fields, found " + std::to_string(fields.size()));
        }
        std::vector<double> row(width - first_value);
        bool ok = true;
        for (std::size_t c = first_value; c < width && ok; ++c) ok = parse_double(fields[c], row[c - first_value]);
        if (!ok) {
            ++raw.dropped_rows;
            continue;
        }
        values.insert(values.end(), row.begin(), row.end());
        if (schema.date_column) raw.timestamps.push_back(trim(fields[0]));
        ++rows;
        if (schema.max_rows != 0 && rows == schema.max_rows) break;
    }
    if (rows == 0) throw DataError("'" + path.string() + "' contains no usable rows");
    raw.values = Tensor({rows, width - first_value}, std::move(values));
    return raw;
}

DatasetPreset dataset_preset(const std::string& name) {
    if (name == "custom") return {"custom", {0.7, 0.1, 0.2}, 0};
    if (name == "weather") return {"weather", {0.7, 0.1, 0.2}, 21};
    if (name == "electricity") return {"electricity", {0.7, 0.1, 0.2}, 321};
    if (name == "solar") return {"solar", {0.7, 0.1, 0.2}, 137};
    if (name == "ettm1") return {"ettm1", {0.6, 0.2, 0.2}, 7};
    if (name == "ett") return {"ett", {0.6, 0.2, 0.2}, 0};
    if (name == "pems03") return {"pems03", {0.6, 0.2, 0.2}, 358};
    throw std::invalid_argument("unknown dataset preset '" + name + "'");
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

const std::vector<std::size_t>& WindowedDataset::windows(Split s) const {
    return s == Split::train ? train : (s == Split::val ? val : test);
}

const RowRange& WindowedDataset::rows(Split s) const {
    return s == Split::train ? train_rows : (s == Split::val ? val_rows : test_rows);
}

WindowedDataset::Batch WindowedDataset::batch(Split split, std::span<const std::size_t> positions) const {
    const auto& starts = windows(split);
    const std::size_t M = channels(), L = lookback, T = horizon, B = positions.size();
    if (B == 0) throw std::invalid_argument("empty batch requested from the " + to_string(split) + " split");
    Batch out{Tensor({B, L, M}), Tensor({B, T, M})};
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t s = starts.at(positions[b]);
        std::copy_n(series.raw() + s * M, L * M, out.x.raw() + b * L * M);
        std::copy_n(series.raw() + (s + L) * M, T * M, out.y.raw() + b * T * M);
    }
    return out;
}

WindowedDataset::Batch WindowedDataset::all(Split split) const {
    std::vector<std::size_t> idx(windows(split).size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return batch(split, idx);
}

nlohmann::json WindowedDataset::digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a(h, series.raw(), series.size() * sizeof(double));
    h = fnv1a(h, stats.mean.raw(), stats.mean.size() * sizeof(double));
    h = fnv1a(h, stats.std.raw(), stats.std.size() * sizeof(double));
    for (const auto* w : {&train, &val, &test}) h = fnv1a(h, w->data(), w->size() * sizeof(std::size_t));
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    auto split_json = [](const RowRange& r, const std::vector<std::size_t>& w) {
        return nlohmann::json{{"rows", {r.begin, r.end}}, {"windows", w.size()}};
    };
    return {{"name", name},
            {"rows", series.dim(0)},
            {"channels", channels()},
            {"lookback", lookback},
            {"horizon", horizon},
            {"splits",
             {{"train", split_json(train_rows, train)},
              {"val", split_json(val_rows, val)},
              {"test", split_json(test_rows, test)}}},
            {"norm_mean", std::vector<double>(stats.mean.data().begin(), stats.mean.data().end())},
            {"norm_std", std::vector<double>(stats.std.data().begin(), stats.std.data().end())},
            {"digest", hex}};
}

WindowedDataset split_and_standardize(const RawSeries& raw, const DatasetPreset& preset,
                                      const WindowOptions& options) {
    const std::size_t len = raw.length(), M = raw.channels();
    const std::size_t L = options.lookback, T = options.horizon;
    if (L == 0 || T == 0 || options.stride == 0) throw std::invalid_argument("lookback, horizon and stride must be positive");
    const auto& r = preset.ratios;
    if (r.train <= 0.0 || r.val <= 0.0 || r.test <= 0.0 || r.train + r.val + r.test > 1.0 + 1e-12) {
        throw std::invalid_argument("split ratios must be positive and sum to at most 1");
    }
    const auto n_train = static_cast<std::size_t>(static_cast<double>(len) * r.train);
    const auto n_test = static_cast<std::size_t>(static_cast<double>(len) * r.test);
    if (n_train + n_test >= len) throw DataError("series of length " + std::to_string(len) + " is too short to split");
    const std::size_t n_val = len - n_train - n_test;
    if (n_train < L + T || n_val < T || n_test < T) {
        throw DataError("series of length " + std::to_string(len) + " is too short for lookback " +
                        std::to_string(L) + " and horizon " + std::to_string(T) + " (split sizes " +
                        std::to_string(n_train) + "/" + std::to_string(n_val) + "/" + std::to_string(n_test) + ")");
    }

    WindowedDataset ds;
    ds.name = raw.name;
    ds.lookback = L;
    ds.horizon = T;
    ds.train_rows = {0, n_train};
    ds.val_rows = {n_train, n_train + n_val};
    ds.test_rows = {n_train + n_val, len};
    if (preset.expected_channels != 0 && preset.expected_channels != M) {
        ds.warnings.push_back("preset '" + preset.name + "' expects " + std::to_string(preset.expected_channels) +
                              " channels, file has " + std::to_string(M));
    }

    ds.stats.mean = Tensor({M});
    ds.stats.std = Tensor({M}, 1.0);
    for (std::size_t m = 0; m < M; ++m) {
        double mu = 0.0;
        for (std::size_t t = 0; t < n_train; ++t) mu += raw.values(t, m);
        mu /= static_cast<double>(n_train);
        double var = 0.0;
        for (std::size_t t = 0; t < n_train; ++t) var += (raw.values(t, m) - mu) * (raw.values(t, m) - mu);
        var /= static_cast<double>(n_train);
        ds.stats.mean[m] = mu;
        if (var > 0.0) {
            ds.stats.std[m] = std::sqrt(var);
        } else {
            ds.warnings.push_back("channel " + std::to_string(m) + " is constant over the train split; std set to 1");
        }
    }
    ds.series = Tensor({len, M});
    for (std::size_t t = 0; t < len; ++t)
        for (std::size_t m = 0; m < M; ++m) ds.series(t, m) = (raw.values(t, m) - ds.stats.mean[m]) / ds.stats.std[m];

    auto enumerate = [&](std::size_t first, std::size_t last, std::vector<std::size_t>& out) {
        for (std::size_t s = first; s <= last; s += options.stride) out.push_back(s);
    };
    enumerate(0, n_train - L - T, ds.train);
    enumerate(n_train - L, n_train + n_val - L - T, ds.val);
    enumerate(len - n_test - L, len - L - T, ds.test);
    return ds;
}

SyntheticKind parse_synthetic_kind(const std::string& s) {
    if (s == "sinusoid") return SyntheticKind::sinusoid;
    if (s == "ar1") return SyntheticKind::ar1;
    if (s == "long_memory_arfima_like" || s == "long_memory") return SyntheticKind::long_memory_arfima_like;
    if (s == "constant") return SyntheticKind::constant;
    throw std::invalid_argument("unknown synthetic kind '" + s + "'");
}

std::string to_string(SyntheticKind k) {
    switch (k) {
        case SyntheticKind::sinusoid: return "sinusoid";
        case SyntheticKind::ar1: return "ar1";
        case SyntheticKind::long_memory_arfima_like: return "long_memory_arfima_like";
        case SyntheticKind::constant: return "constant";
    }
    return "?";
}

RawSeries make_synthetic(SyntheticKind kind, const SyntheticParams& p, std::uint64_t seed) {
    if (p.length == 0 || p.channels == 0) throw std::invalid_argument("synthetic series needs positive length and channels");
    if (p.noise_std < 0.0 || p.innovation_std < 0.0) throw std::invalid_argument("noise scales must be non-negative");
    Rng rng(seed);
    const std::size_t n = p.length, M = p.channels;
    RawSeries raw;
    raw.name = to_string(kind);
    raw.values = Tensor({n, M});
    for (std::size_t m = 0; m < M; ++m) raw.columns.push_back("c" + std::to_string(m));

    switch (kind) {
        case SyntheticKind::sinusoid: {
            if (p.period <= 0.0) throw std::invalid_argument("sinusoid period must be positive");
            for (std::size_t t = 0; t < n; ++t) {
                for (std::size_t m = 0; m < M; ++m) {
                    const double phase = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(M);
                    double v = p.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / p.period + phase);
                    if (p.noise_std > 0.0) v += p.noise_std * rng.normal();
                    raw.values(t, m) = v;
                }
            }
            break;
        }
        case SyntheticKind::ar1: {
            if (std::abs(p.phi) >= 1.0 && !p.allow_nonstationary) {
                throw std::invalid_argument("ar1 with |phi| >= 1 is non-stationary; set allow_nonstationary");
            }
            const double start_std = std::abs(p.phi) < 1.0 ? p.innovation_std / std::sqrt(1.0 - p.phi * p.phi)
                                                            : p.innovation_std;
            for (std::size_t m = 0; m < M; ++m) raw.values(0, m) = start_std * rng.normal();
            for (std::size_t t = 1; t < n; ++t)
                for (std::size_t m = 0; m < M; ++m)
                    raw.values(t, m) = p.phi * raw.values(t - 1, m) + p.innovation_std * rng.normal();
            break;
        }
        case SyntheticKind::long_memory_arfima_like: {
            if (!(p.d > -0.5 && p.d < 0.5)) throw std::invalid_argument("fractional order d must lie in (-0.5, 0.5)");
            // ARFIMA(0, d, 0) through its truncated MA(inf) expansion.
            const std::size_t K = std::max<std::size_t>(p.ma_terms, 1);
            std::vector<double> psi(K + 1);
            psi[0] = 1.0;
            for (std::size_t k = 1; k <= K; ++k) psi[k] = psi[k - 1] * (static_cast<double>(k) - 1.0 + p.d) / static_cast<double>(k);
            for (std::size_t m = 0; m < M; ++m) {
                std::vector<double> eps(n + K);
                for (auto& e : eps) e = p.innovation_std * rng.normal();
                for (std::size_t t = 0; t < n; ++t) {
                    double v = 0.0;
                    for (std::size_t k = 0; k <= K; ++k) v += psi[k] * eps[t + K - k];
                    raw.values(t, m) = v;
                }
            }
            break;
        }
        case SyntheticKind::constant: {
            for (std::size_t t = 0; t < n; ++t)
                for (std::size_t m = 0; m < M; ++m)
                    raw.values(t, m) = p.value + (p.noise_std > 0.0 ? p.noise_std * rng.normal() : 0.0);
            break;
        }
    }
    return raw;
}

}  // namespace pslstm
