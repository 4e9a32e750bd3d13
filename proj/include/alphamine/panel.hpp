#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "alphamine/dsl.hpp"
#include "alphamine/error.hpp"
#include "alphamine/matrix.hpp"

namespace alphamine {

using Date = std::chrono::sys_days;

// Strict ISO-8601 calendar date (YYYY-MM-DD). Throws DateError.
Date parse_date(std::string_view text);
std::string format_date(Date d);

class SchemaError : public Error {
public:
    using Error::Error;
};
class ValueError : public Error {
public:
    using Error::Error;
};
class DateError : public Error {
public:
    using Error::Error;
};
class SplitError : public Error {
public:
    using Error::Error;
};
class EmptySplitError : public SplitError {
public:
    using SplitError::SplitError;
};

// Aligned OHLCV panel over the union calendar of its symbols. A (symbol, date)
// cell is either present in all five fields or missing in all of them.
struct Panel {
    std::vector<std::string> symbols;
    std::vector<Date> dates;
    std::array<Matrix, kFeatureCount> fields;

    std::size_t n_symbols() const { return symbols.size(); }
    std::size_t n_dates() const { return dates.size(); }
    const Matrix& field(Feature f) const { return fields[static_cast<std::size_t>(f)]; }
    Matrix& field(Feature f) { return fields[static_cast<std::size_t>(f)]; }
    bool present(std::size_t s, std::size_t t) const { return field(Feature::close).valid(s, t); }

    // Throws ValueError/DateError when an invariant is broken.
    void validate() const;

    // Dates [begin, end) with all symbols kept.
    Panel slice(std::size_t begin, std::size_t end) const;

    // Empty panel with the given calendar; every cell missing.
    static Panel empty(std::vector<std::string> symbols, std::vector<Date> dates);
};

Panel load_csv(const std::filesystem::path& path);
Panel read_csv(std::istream& in, const std::string& source = "<stream>");
// Long format, same header as load_csv; only present cells are written.
void write_csv(const Panel& panel, std::ostream& out);
void write_csv(const Panel& panel, const std::filesystem::path& path);

struct BaseAlphas {
    Matrix intraday_return;    // close / open - 1
    Matrix daily_return;       // close_t / close_{t-1} - 1
    Matrix relative_volume;    // volume / SMA(volume, 20)
    Matrix normalized_range;   // (high - low) / close

    std::vector<const Matrix*> all() const {
        return {&intraday_return, &daily_return, &relative_volume, &normalized_range};
    }
};

inline constexpr std::size_t kRelativeVolumeWindow = 20;

BaseAlphas base_alphas(const Panel& panel);

// Label at date t is close_{t+1} / close_t - 1.
ReturnMatrix next_day_returns(const Panel& panel);

// Inclusive start, exclusive end.
struct DateRange {
    Date begin;
    Date end;

    bool contains(Date d) const { return d >= begin && d < end; }
};

struct SplitSpec {
    DateRange train;
    DateRange valid;
    DateRange test;

    // Throws SplitError unless ranges are non-empty, non-overlapping and in
    // train < valid < test order.
    void check() const;
};

struct SplitPanels {
    Panel train;
    Panel valid;
    Panel test;
};

SplitPanels split(const Panel& panel, const SplitSpec& spec);

// Date window used for factor evaluation: the reported range plus up to
// `warmup` extra dates of history before it.
struct WindowedPanel {
    Panel panel;
    std::size_t report_begin = 0;   // first reported column inside `panel`
};

WindowedPanel window_with_warmup(const Panel& panel, const DateRange& range, std::size_t warmup);

// Column index range [first, last) of `panel.dates` inside `range`.
std::pair<std::size_t, std::size_t> date_span(const Panel& panel, const DateRange& range);

} // namespace alphamine
