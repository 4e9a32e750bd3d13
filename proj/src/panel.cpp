#include "alphamine/panel.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace alphamine {

Date parse_date(std::string_view text) {
    using namespace std::chrono;
    auto bad = [&] { return DateError("unparseable date '" + std::string(text) + "'"); };
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw bad();
    auto num = [&](std::size_t pos, std::size_t len) {
        int v = 0;
        auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, v);
        if (ec != std::errc{} || p != text.data() + pos + len) throw bad();
        return v;
    };
    const year_month_day ymd{year{num(0, 4)}, month{static_cast<unsigned>(num(5, 2))},
                             day{static_cast<unsigned>(num(8, 2))}};
    if (!ymd.ok()) throw bad();
    return sys_days{ymd};
}

std::string format_date(Date d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

void Panel::validate() const {
    for (std::size_t i = 1; i < dates.size(); ++i) {
        if (!(dates[i - 1] < dates[i])) throw DateError("panel dates not strictly increasing");
    }
    for (const auto& m : fields) {
        if (m.rows() != symbols.size() || m.cols() != dates.size()) {
            throw ValueError("panel field shape mismatch");
        }
    }
    const Matrix& close = field(Feature::close);
    const Matrix& volume = field(Feature::volume);
    for (std::size_t s = 0; s < n_symbols(); ++s) {
        for (std::size_t t = 0; t < n_dates(); ++t) {
            const bool p = close.valid(s, t);
            for (const auto& m : fields) {
                if (m.valid(s, t) != p) throw ValueError("panel fields disagree on missing cells");
            }
            if (!p) continue;
            if (close.value(s, t) <= 0.0) throw ValueError("non-positive close for " + symbols[s]);
            if (volume.value(s, t) < 0.0) throw ValueError("negative volume for " + symbols[s]);
        }
    }
}

Panel Panel::slice(std::size_t begin, std::size_t end) const {
    Panel out;
    out.symbols = symbols;
    out.dates.assign(dates.begin() + static_cast<std::ptrdiff_t>(begin),
                     dates.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t f = 0; f < kFeatureCount; ++f) out.fields[f] = fields[f].slice_cols(begin, end);
    return out;
}

Panel Panel::empty(std::vector<std::string> symbols, std::vector<Date> dates) {
    Panel p;
    p.symbols = std::move(symbols);
    p.dates = std::move(dates);
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
        p.fields[f] = Matrix(p.symbols.size(), p.dates.size());
        p.fields[f].name = std::string(feature_name(static_cast<Feature>(f)));
    }
    return p;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

constexpr std::array<std::string_view, 7> kColumns{"date", "symbol", "open", "high",
                                                   "low",  "close",  "volume"};

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

double parse_number(std::string_view text, const std::string& where) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc{} || p != text.data() + text.size() || !std::isfinite(v)) {
        throw ValueError(where + ": non-numeric value '" + std::string(text) + "'");
    }
    return v;
}

struct Row {
    Date date;
    std::string symbol;
    std::array<double, kFeatureCount> ohlcv;
};

std::string fmt_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

} // namespace

Panel read_csv(std::istream& in, const std::string& source) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(source + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_fields(line);
    for (auto col : kColumns) {
        if (std::find(header.begin(), header.end(), col) == header.end()) {
            throw SchemaError(source + ": missing column '" + std::string(col) + "'");
        }
    }
    if (header.size() != kColumns.size() || !std::equal(header.begin(), header.end(), kColumns.begin())) {
        throw SchemaError(source + ": header must be exactly date,symbol,open,high,low,close,volume");
    }

    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = source + ":" + std::to_string(line_no);
        const auto cells = split_fields(line);
        if (cells.size() != kColumns.size()) {
            throw SchemaError(where + ": expected 7 fields, got " + std::to_string(cells.size()));
        }
        Row r;
        try {
            r.date = parse_date(cells[0]);
        } catch (const DateError& e) {
            throw DateError(where + ": " + e.what());
        }
        r.symbol = std::string(cells[1]);
        if (r.symbol.empty()) throw ValueError(where + ": empty symbol");
        for (std::size_t f = 0; f < kFeatureCount; ++f) r.ohlcv[f] = parse_number(cells[2 + f], where);
        if (r.ohlcv[static_cast<std::size_t>(Feature::close)] <= 0.0) {
            throw ValueError(where + ": non-positive close");
        }
        if (r.ohlcv[static_cast<std::size_t>(Feature::volume)] < 0.0) {
            throw ValueError(where + ": negative volume");
        }
        rows.push_back(std::move(r));
    }

    std::set<std::string> symbol_set;
    std::set<Date> date_set;
    for (const auto& r : rows) {
        symbol_set.insert(r.symbol);
        date_set.insert(r.date);
    }
    Panel panel = Panel::empty({symbol_set.begin(), symbol_set.end()}, {date_set.begin(), date_set.end()});
    std::map<std::string, std::size_t> sym_index;
    for (std::size_t i = 0; i < panel.symbols.size(); ++i) sym_index[panel.symbols[i]] = i;
    for (const auto& r : rows) {
        const std::size_t s = sym_index[r.symbol];
        const auto t = static_cast<std::size_t>(
            std::lower_bound(panel.dates.begin(), panel.dates.end(), r.date) - panel.dates.begin());
        if (panel.present(s, t)) {
            throw DateError(source + ": duplicated row for (" + r.symbol + ", " + format_date(r.date) + ")");
        }
        for (std::size_t f = 0; f < kFeatureCount; ++f) panel.fields[f].set(s, t, r.ohlcv[f]);
    }
    return panel;
}

Panel load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path.string());
    return read_csv(in, path.string());
}

void write_csv(const Panel& panel, std::ostream& out) {
    out << "date,symbol,open,high,low,close,volume\n";
    for (std::size_t t = 0; t < panel.n_dates(); ++t) {
        const std::string date = format_date(panel.dates[t]);
        for (std::size_t s = 0; s < panel.n_symbols(); ++s) {
            if (!panel.present(s, t)) continue;
            out << date << ',' << panel.symbols[s];
            for (std::size_t f = 0; f < kFeatureCount; ++f) out << ',' << fmt_double(panel.fields[f].value(s, t));
            out << '\n';
        }
    }
}

void write_csv(const Panel& panel, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw StorageError("cannot write " + path.string());
    write_csv(panel, out);
}

// ---------------------------------------------------------------------------
// Derived series

BaseAlphas base_alphas(const Panel& panel) {
    const std::size_t n = panel.n_symbols();
    const std::size_t T = panel.n_dates();
    const Matrix& open = panel.field(Feature::open);
    const Matrix& high = panel.field(Feature::high);
    const Matrix& low = panel.field(Feature::low);
    const Matrix& close = panel.field(Feature::close);
    const Matrix& volume = panel.field(Feature::volume);

    BaseAlphas out{Matrix(n, T), Matrix(n, T), Matrix(n, T), Matrix(n, T)};
    out.intraday_return.name = "intraday_return";
    out.daily_return.name = "daily_return";
    out.relative_volume.name = "relative_volume_20";
    out.normalized_range.name = "normalized_range";

    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t t = 0; t < T; ++t) {
            if (!panel.present(s, t)) continue;
            const double o = open.value(s, t);
            const double c = close.value(s, t);
            if (o != 0.0) out.intraday_return.set(s, t, c / o - 1.0);
            out.normalized_range.set(s, t, (high.value(s, t) - low.value(s, t)) / c);
            if (t >= 1 && panel.present(s, t - 1)) {
                out.daily_return.set(s, t, c / close.value(s, t - 1) - 1.0);
            }
            if (t + 1 >= kRelativeVolumeWindow) {
                double sum = 0.0;
                bool full = true;
                for (std::size_t k = t + 1 - kRelativeVolumeWindow; k <= t; ++k) {
                    if (!volume.valid(s, k)) {
                        full = false;
                        break;
                    }
                    sum += volume.value(s, k);
                }
                const double mean = sum / static_cast<double>(kRelativeVolumeWindow);
                if (full && mean > 0.0) out.relative_volume.set(s, t, volume.value(s, t) / mean);
            }
        }
    }
    return out;
}

ReturnMatrix next_day_returns(const Panel& panel) {
    const Matrix& close = panel.field(Feature::close);
    ReturnMatrix r(panel.n_symbols(), panel.n_dates());
    r.name = "next_day_return";
    for (std::size_t s = 0; s < panel.n_symbols(); ++s) {
        for (std::size_t t = 0; t + 1 < panel.n_dates(); ++t) {
            if (close.valid(s, t) && close.valid(s, t + 1)) {
                r.set(s, t, close.value(s, t + 1) / close.value(s, t) - 1.0);
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Splits

void SplitSpec::check() const {
    for (const DateRange* r : {&train, &valid, &test}) {
        if (!(r->begin < r->end)) throw SplitError("split range must have begin < end");
    }
    if (train.end > valid.begin || valid.end > test.begin) {
        throw SplitError("split ranges must be ordered train < valid < test without overlap");
    }
}

std::pair<std::size_t, std::size_t> date_span(const Panel& panel, const DateRange& range) {
    const auto first = std::lower_bound(panel.dates.begin(), panel.dates.end(), range.begin);
    const auto last = std::lower_bound(panel.dates.begin(), panel.dates.end(), range.end);
    return {static_cast<std::size_t>(first - panel.dates.begin()),
            static_cast<std::size_t>(last - panel.dates.begin())};
}

SplitPanels split(const Panel& panel, const SplitSpec& spec) {
    spec.check();
    auto cut = [&](const DateRange& r, const char* which) {
        auto [b, e] = date_span(panel, r);
        if (b >= e) throw EmptySplitError(std::string(which) + " split contains no panel dates");
        return panel.slice(b, e);
    };
    return {cut(spec.train, "train"), cut(spec.valid, "valid"), cut(spec.test, "test")};
}

WindowedPanel window_with_warmup(const Panel& panel, const DateRange& range, std::size_t warmup) {
    auto [b, e] = date_span(panel, range);
    if (b >= e) throw EmptySplitError("window contains no panel dates");
    const std::size_t start = b >= warmup ? b - warmup : 0;
    return {panel.slice(start, e), b - start};
}

} // namespace alphamine
