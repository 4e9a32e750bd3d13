#pragma once

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "alphamine/error.hpp"
#include "alphamine/matrix.hpp"
#include "alphamine/panel.hpp"

namespace alphamine {

class SingularError : public Error {
public:
    using Error::Error;
};
class DegenerateError : public Error {
public:
    using Error::Error;
};
class UniverseTooSmallError : public Error {
public:
    using Error::Error;
};
class EmptyRunError : public Error {
public:
    using Error::Error;
};

inline constexpr std::size_t kTradingDaysPerYear = 252;
inline constexpr std::size_t kMinCrossSection = 20;
inline constexpr std::size_t kAllColumns = std::numeric_limits<std::size_t>::max();

using FeatureList = std::vector<const Matrix*>;

// ---------------------------------------------------------------------------
// Combiner

enum class CombinerKind { ridge, equal_weight };

struct Combiner {
    CombinerKind kind = CombinerKind::ridge;
    std::vector<double> coefficients;
    double penalty = 0.0;
};

// Ridge regression without intercept (inputs are cross-sectionally z-scored)
// over every (symbol, date) with all features and the label present.
// Throws SingularError only when penalty == 0 and the design is rank deficient.
Combiner fit_combiner(const FeatureList& features, const Matrix& labels, double penalty);
Combiner equal_weight_combiner(std::size_t n_features);

// Linear combination per cell; missing where any feature is missing.
ScoreMatrix score(const Combiner& c, const FeatureList& features, std::size_t col_begin = 0,
                  std::size_t col_end = kAllColumns);

// ---------------------------------------------------------------------------
// Predictive metrics

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
std::vector<double> average_ranks(std::span<const double> x);

// mean / sample std (ddof = 1). Throws DegenerateError when the series has
// fewer than two points or std < 1e-12.
double mean_over_std(std::span<const double> series);

struct IcMetrics {
    std::vector<std::size_t> columns;   // panel column of each included date
    std::vector<double> ic;             // Pearson per date
    std::vector<double> rank_ic;        // Spearman per date
    double mean_ic = 0.0;
    double mean_rank_ic = 0.0;
    std::optional<double> icir;         // empty when the IC series is degenerate
    std::optional<double> rank_icir;
};

// Dates with fewer than `min_pairs` valid (score, return) pairs are skipped.
// Throws DegenerateError if no date qualifies.
IcMetrics ic_metrics(const ScoreMatrix& scores, const ReturnMatrix& returns,
                     std::size_t min_pairs = kMinCrossSection, std::size_t col_begin = 0,
                     std::size_t col_end = kAllColumns);

// ---------------------------------------------------------------------------
// Portfolio simulation

struct StrategyConfig {
    std::size_t k = 50;
    std::size_t n_drop = 5;
    double buy_fee = 0.0005;
    double sell_fee = 0.0015;
    double initial_capital = 1.0;
    // Days between the signal date and the fill (fills at that day's close).
    std::size_t fill_lag = 1;

    void validate(std::size_t universe) const;
};

StrategyConfig strategy_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StrategyConfig& c);

// Cash plus long positions held at notional value. Fees are charged on traded
// notional: buying q costs q * (1 + buy_fee), selling v returns v * (1 - sell_fee).
class Portfolio {
public:
    explicit Portfolio(double cash) : cash_(cash) {}

    // Returns the fee charged.
    double buy(std::size_t symbol, double notional, double fee_rate);
    // Sells the whole position; returns the fee charged.
    double sell(std::size_t symbol, double fee_rate);
    // Scales a position by its price growth; returns the PnL.
    double mark(std::size_t symbol, double growth);

    double cash() const { return cash_; }
    double equity() const;
    double fees_paid() const { return fees_; }
    bool holds(std::size_t symbol) const { return positions_.count(symbol) > 0; }
    double position(std::size_t symbol) const;
    const std::map<std::size_t, double>& positions() const { return positions_; }

private:
    double cash_;
    double fees_ = 0.0;
    std::map<std::size_t, double> positions_;
};

struct Benchmark {
    // Empty: equal-weight portfolio of the whole universe, rebalanced daily.
    // Otherwise one daily return per simulated date after the first.
    std::vector<double> daily_returns;
};

struct BacktestReport {
    std::vector<Date> dates;
    std::vector<double> equity;           // starts at 1.0
    std::vector<double> benchmark;        // starts at 1.0
    std::vector<double> daily_excess;     // strategy minus benchmark daily return
    std::vector<double> daily_turnover;   // traded notional / pre-trade equity
    std::vector<double> daily_pnl;        // position PnL per day (capital units)
    std::vector<double> daily_fees;       // fees per day (capital units)
    std::vector<std::size_t> daily_sells;
    std::vector<std::size_t> daily_buys;
    double annualized_return = 0.0;       // strategy, mean daily * 252
    double benchmark_return = 0.0;        // benchmark, mean daily * 252
    double excess_return = 0.0;           // AR
    double information_ratio = 0.0;       // IR
    double max_drawdown = 0.0;            // MDD (<= 0)
    double turnover = 0.0;                // mean daily turnover
    double cost_paid = 0.0;               // total fees / initial capital
    std::optional<IcMetrics> ic;          // filled by callers that have labels
};

// Top-k dropout: each day rank by the score of `fill_lag` days earlier, sell
// held names sitting in the bottom n_drop of (holdings + best non-held
// candidates) but never more than the pool can replace, buy the best
// non-held names to restore k holdings. Proceeds
// are split equally among the buys. Columns [col_begin, col_end) of the panel
// are simulated. Throws UniverseTooSmallError when k exceeds the universe.
BacktestReport simulate_topk_dropout(const ScoreMatrix& scores, const Panel& panel, const StrategyConfig& cfg,
                                     const Benchmark& benchmark = {}, std::size_t col_begin = 0,
                                     std::size_t col_end = kAllColumns);

// min over t of e_t / max_{s<=t} e_s - 1.
double max_drawdown(std::span<const double> equity);

// Fraction of values strictly above `threshold`. Throws EmptyRunError if empty.
double hit_ratio(std::span<const double> annualized_returns, double threshold);

nlohmann::json to_json(const IcMetrics& m);
nlohmann::json to_json(const BacktestReport& r, bool include_series = false);

void write_equity_csv(const BacktestReport& r, std::ostream& out);
void write_equity_svg(const BacktestReport& r, std::ostream& out, const std::string& title = "equity");

} // namespace alphamine
