#include "alphamine/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace alphamine {

// ---------------------------------------------------------------------------
// Combiner

Combiner fit_combiner(const FeatureList& features, const Matrix& labels, double penalty) {
    if (features.empty()) throw Error("fit_combiner needs at least one feature");
    if (!(penalty >= 0.0)) throw Error("ridge penalty must be >= 0");
    const std::size_t p = features.size();
    for (const Matrix* f : features) {
        if (!f->same_shape(labels)) throw Error("feature/label shape mismatch");
    }

    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    std::vector<double> row(p);
    std::size_t n_rows = 0;
    for (std::size_t r = 0; r < labels.rows(); ++r) {
        for (std::size_t c = 0; c < labels.cols(); ++c) {
            if (!labels.valid(r, c)) continue;
            bool ok = true;
            for (std::size_t j = 0; j < p && ok; ++j) {
                ok = features[j]->valid(r, c);
                if (ok) row[j] = features[j]->value(r, c);
            }
            if (!ok) continue;
            ++n_rows;
            const double y = labels.value(r, c);
            for (std::size_t i = 0; i < p; ++i) {
                const auto ii = static_cast<Eigen::Index>(i);
                xty(ii) += row[i] * y;
                for (std::size_t j = 0; j < p; ++j) xtx(ii, static_cast<Eigen::Index>(j)) += row[i] * row[j];
            }
        }
    }
    if (n_rows == 0) throw SingularError("no training rows with all features and label present");

    Eigen::VectorXd beta;
    if (penalty == 0.0) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xtx);
        if (qr.rank() < static_cast<Eigen::Index>(p)) throw SingularError("design matrix is rank deficient");
        beta = qr.solve(xty);
    } else {
        xtx.diagonal().array() += penalty;
        beta = xtx.ldlt().solve(xty);
    }
    Combiner c;
    c.kind = CombinerKind::ridge;
    c.penalty = penalty;
    c.coefficients.assign(beta.data(), beta.data() + beta.size());
    for (double b : c.coefficients) {
        if (!std::isfinite(b)) throw SingularError("ridge solution is not finite");
    }
    return c;
}

Combiner equal_weight_combiner(std::size_t n_features) {
    Combiner c;
    c.kind = CombinerKind::equal_weight;
    c.coefficients.assign(n_features, 1.0 / static_cast<double>(n_features));
    return c;
}

ScoreMatrix score(const Combiner& c, const FeatureList& features, std::size_t col_begin, std::size_t col_end) {
    if (features.size() != c.coefficients.size()) throw Error("combiner/feature count mismatch");
    const Matrix& first = *features.front();
    col_end = std::min(col_end, first.cols());
    ScoreMatrix out(first.rows(), col_end - col_begin);
    out.name = "score";
    for (std::size_t r = 0; r < first.rows(); ++r) {
        for (std::size_t col = col_begin; col < col_end; ++col) {
            double s = 0.0;
            bool ok = true;
            for (std::size_t j = 0; j < features.size() && ok; ++j) {
                ok = features[j]->valid(r, col);
                if (ok) s += c.coefficients[j] * features[j]->value(r, col);
            }
            if (ok) out.set(r, col - col_begin, s);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

double pearson(std::span<const double> x, std::span<const double> y) {
    const auto n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nan("");
    return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

double mean_over_std(std::span<const double> series) {
    if (series.size() < 2) throw DegenerateError("series too short for mean/std");
    const auto n = static_cast<double>(series.size());
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : series) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd >= 1e-12)) throw DegenerateError("series has zero dispersion");
    return mean / sd;
}

IcMetrics ic_metrics(const ScoreMatrix& scores, const ReturnMatrix& returns, std::size_t min_pairs,
                     std::size_t col_begin, std::size_t col_end) {
    if (!scores.same_shape(returns)) throw Error("score/return shape mismatch");
    col_end = std::min(col_end, scores.cols());
    const std::size_t span = col_end > col_begin ? col_end - col_begin : 0;
    std::vector<double> ic(span, std::nan("")), ric(span, std::nan(""));
    const auto count = static_cast<std::ptrdiff_t>(span);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        const std::size_t c = col_begin + static_cast<std::size_t>(i);
        std::vector<double> x, y;
        for (std::size_t r = 0; r < scores.rows(); ++r) {
            if (scores.valid(r, c) && returns.valid(r, c)) {
                x.push_back(scores.value(r, c));
                y.push_back(returns.value(r, c));
            }
        }
        if (x.size() < min_pairs || x.size() < 2) continue;
        ic[static_cast<std::size_t>(i)] = pearson(x, y);
        ric[static_cast<std::size_t>(i)] = spearman(x, y);
    }
    IcMetrics m;
    for (std::size_t i = 0; i < span; ++i) {
        if (std::isnan(ic[i]) || std::isnan(ric[i])) continue;
        m.columns.push_back(col_begin + i);
        m.ic.push_back(ic[i]);
        m.rank_ic.push_back(ric[i]);
    }
    if (m.ic.empty()) throw DegenerateError("no date has enough valid score/return pairs");
    m.mean_ic = std::accumulate(m.ic.begin(), m.ic.end(), 0.0) / static_cast<double>(m.ic.size());
    m.mean_rank_ic = std::accumulate(m.rank_ic.begin(), m.rank_ic.end(), 0.0) / static_cast<double>(m.rank_ic.size());
    try {
        m.icir = mean_over_std(m.ic);
    } catch (const DegenerateError&) {
    }
    try {
        m.rank_icir = mean_over_std(m.rank_ic);
    } catch (const DegenerateError&) {
    }
    return m;
}

// ---------------------------------------------------------------------------
// Strategy

void StrategyConfig::validate(std::size_t universe) const {
    if (k == 0 || n_drop == 0 || n_drop > k) throw ConfigError("strategy needs 0 < n_drop <= k");
    if (buy_fee < 0.0 || sell_fee < 0.0) throw ConfigError("fee rates must be >= 0");
    if (!(initial_capital > 0.0)) throw ConfigError("initial capital must be > 0");
    if (k > universe) {
        throw UniverseTooSmallError("k = " + std::to_string(k) + " exceeds universe of " + std::to_string(universe));
    }
}

StrategyConfig strategy_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("strategy must be an object");
    StrategyConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        try {
            if (key == "k") c.k = it->get<std::size_t>();
            else if (key == "n_drop") c.n_drop = it->get<std::size_t>();
            else if (key == "buy_fee") c.buy_fee = it->get<double>();
            else if (key == "sell_fee") c.sell_fee = it->get<double>();
            else if (key == "initial_capital") c.initial_capital = it->get<double>();
            else if (key == "fill_lag") c.fill_lag = it->get<std::size_t>();
            else throw ConfigError("unknown key '" + key + "' in strategy");
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("bad value for strategy." + key + ": " + e.what());
        }
    }
    return c;
}

nlohmann::json to_json(const StrategyConfig& c) {
    return {{"k", c.k},
            {"n_drop", c.n_drop},
            {"buy_fee", c.buy_fee},
            {"sell_fee", c.sell_fee},
            {"initial_capital", c.initial_capital},
            {"fill_lag", c.fill_lag}};
}

double Portfolio::buy(std::size_t symbol, double notional, double fee_rate) {
    const double fee = notional * fee_rate;
    cash_ -= notional + fee;
    positions_[symbol] += notional;
    fees_ += fee;
    return fee;
}

double Portfolio::sell(std::size_t symbol, double fee_rate) {
    auto it = positions_.find(symbol);
    if (it == positions_.end()) return 0.0;
    const double value = it->second;
    const double fee = value * fee_rate;
    cash_ += value - fee;
    fees_ += fee;
    positions_.erase(it);
    return fee;
}

double Portfolio::mark(std::size_t symbol, double growth) {
    auto it = positions_.find(symbol);
    if (it == positions_.end()) return 0.0;
    const double before = it->second;
    it->second = before * growth;
    return it->second - before;
}

double Portfolio::equity() const {
    double e = cash_;
    for (const auto& [s, v] : positions_) e += v;
    return e;
}

double Portfolio::position(std::size_t symbol) const {
    auto it = positions_.find(symbol);
    return it == positions_.end() ? 0.0 : it->second;
}

double max_drawdown(std::span<const double> equity) {
    double peak = -std::numeric_limits<double>::infinity();
    double mdd = 0.0;
    for (double e : equity) {
        peak = std::max(peak, e);
        if (peak > 0.0) mdd = std::min(mdd, e / peak - 1.0);
    }
    return mdd;
}

double hit_ratio(std::span<const double> annualized_returns, double threshold) {
    if (annualized_returns.empty()) throw EmptyRunError("hit ratio over an empty run");
    const auto hits = std::count_if(annualized_returns.begin(), annualized_returns.end(),
                                    [&](double ar) { return ar > threshold; });
    return static_cast<double>(hits) / static_cast<double>(annualized_returns.size());
}

namespace {

double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct Ranked {
    double score;
    std::size_t symbol;
};

// Descending score, ascending symbol index on ties.
bool better(const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.symbol < b.symbol;
}

} // namespace

BacktestReport simulate_topk_dropout(const ScoreMatrix& scores, const Panel& panel, const StrategyConfig& cfg,
                                     const Benchmark& benchmark, std::size_t col_begin, std::size_t col_end) {
    cfg.validate(panel.n_symbols());
    if (scores.rows() != panel.n_symbols() || scores.cols() != panel.n_dates()) {
        throw Error("scores are not aligned with the panel");
    }
    col_end = std::min(col_end, panel.n_dates());
    if (col_begin >= col_end) throw Error("empty simulation window");
    const std::size_t n_days = col_end - col_begin;
    if (!benchmark.daily_returns.empty() && benchmark.daily_returns.size() + 1 != n_days) {
        throw Error("benchmark series length does not match the simulation window");
    }

    const Matrix& close = panel.field(Feature::close);
    const double cap = cfg.initial_capital;
    const double neg_inf = -std::numeric_limits<double>::infinity();
    Portfolio book(cap);
    double bench = cap;

    BacktestReport rep;
    for (std::size_t t = col_begin; t < col_end; ++t) {
        double pnl = 0.0;
        double day_fees = 0.0;
        if (t > col_begin) {
            // Mark to market from close_{t-1} to close_t.
            std::vector<std::size_t> held;
            for (const auto& [s, v] : book.positions()) held.push_back(s);
            for (std::size_t s : held) {
                if (close.valid(s, t) && close.valid(s, t - 1)) pnl += book.mark(s, close.value(s, t) / close.value(s, t - 1));
            }
            double bench_ret = 0.0;
            if (benchmark.daily_returns.empty()) {
                double sum = 0.0;
                std::size_t n = 0;
                for (std::size_t s = 0; s < panel.n_symbols(); ++s) {
                    if (close.valid(s, t) && close.valid(s, t - 1)) {
                        sum += close.value(s, t) / close.value(s, t - 1) - 1.0;
                        ++n;
                    }
                }
                bench_ret = n ? sum / static_cast<double>(n) : 0.0;
            } else {
                bench_ret = benchmark.daily_returns[t - col_begin - 1];
            }
            bench *= 1.0 + bench_ret;
        }

        const double pre_trade = book.equity();
        double traded = 0.0;
        std::size_t n_sold = 0, n_bought = 0;
        if (t >= col_begin + cfg.fill_lag) {
            const std::size_t sig = t - cfg.fill_lag;
            auto score_of = [&](std::size_t s) { return scores.valid(s, sig) ? scores.value(s, sig) : neg_inf; };

            std::vector<Ranked> held;
            for (const auto& [s, v] : book.positions()) held.push_back({score_of(s), s});
            std::vector<Ranked> pool;
            for (std::size_t s = 0; s < panel.n_symbols(); ++s) {
                if (!book.holds(s) && scores.valid(s, sig) && close.valid(s, t)) pool.push_back({score_of(s), s});
            }
            std::sort(pool.begin(), pool.end(), better);
            const std::size_t vacant = cfg.k > held.size() ? cfg.k - held.size() : 0;
            pool.resize(std::min(pool.size(), cfg.n_drop + vacant));

            std::vector<Ranked> combined = held;
            combined.insert(combined.end(), pool.begin(), pool.end());
            std::sort(combined.begin(), combined.end(), better);
            const std::size_t tail_from = combined.size() > cfg.n_drop ? combined.size() - cfg.n_drop : 0;

            // Never sell more names than the candidate pool can replace.
            const std::size_t max_sells = pool.size() > vacant ? pool.size() - vacant : 0;
            std::vector<std::size_t> to_sell;
            for (std::size_t i = combined.size(); i > tail_from && to_sell.size() < max_sells; --i) {
                const std::size_t s = combined[i - 1].symbol;
                if (book.holds(s) && close.valid(s, t)) to_sell.push_back(s);
            }
            for (std::size_t s : to_sell) {
                traded += book.position(s);
                day_fees += book.sell(s, cfg.sell_fee);
                ++n_sold;
            }
            const std::size_t n_buy = std::min(pool.size(), to_sell.size() + vacant);
            if (n_buy > 0 && book.cash() > 0.0) {
                const double each = book.cash() / (static_cast<double>(n_buy) * (1.0 + cfg.buy_fee));
                for (std::size_t i = 0; i < n_buy; ++i) {
                    day_fees += book.buy(pool[i].symbol, each, cfg.buy_fee);
                    traded += each;
                    ++n_bought;
                }
            }
        }

        rep.dates.push_back(panel.dates[t]);
        rep.equity.push_back(book.equity() / cap);
        rep.benchmark.push_back(bench / cap);
        rep.daily_turnover.push_back(pre_trade > 0.0 ? traded / pre_trade : 0.0);
        rep.daily_pnl.push_back(pnl);
        rep.daily_fees.push_back(day_fees);
        rep.daily_sells.push_back(n_sold);
        rep.daily_buys.push_back(n_bought);
    }

    std::vector<double> strat_daily, bench_daily;
    for (std::size_t i = 1; i < rep.equity.size(); ++i) {
        strat_daily.push_back(rep.equity[i] / rep.equity[i - 1] - 1.0);
        bench_daily.push_back(rep.benchmark[i] / rep.benchmark[i - 1] - 1.0);
        rep.daily_excess.push_back(strat_daily.back() - bench_daily.back());
    }
    const auto year = static_cast<double>(kTradingDaysPerYear);
    rep.annualized_return = mean(strat_daily) * year;
    rep.benchmark_return = mean(bench_daily) * year;
    rep.excess_return = mean(rep.daily_excess) * year;
    try {
        rep.information_ratio = mean_over_std(rep.daily_excess) * std::sqrt(year);
    } catch (const DegenerateError&) {
        rep.information_ratio = 0.0;
    }
    rep.max_drawdown = max_drawdown(rep.equity);
    rep.turnover = mean(rep.daily_turnover);
    rep.cost_paid = book.fees_paid() / cap;
    return rep;
}

// ---------------------------------------------------------------------------
// Export

nlohmann::json to_json(const IcMetrics& m) {
    nlohmann::json j{{"dates", m.ic.size()}, {"IC", m.mean_ic}, {"RankIC", m.mean_rank_ic}};
    j["ICIR"] = m.icir ? nlohmann::json(*m.icir) : nlohmann::json(nullptr);
    j["RankICIR"] = m.rank_icir ? nlohmann::json(*m.rank_icir) : nlohmann::json(nullptr);
    return j;
}

nlohmann::json to_json(const BacktestReport& r, bool include_series) {
    nlohmann::json j{
        {"days", r.equity.size()},
        {"AR", r.excess_return},
        {"IR", r.information_ratio},
        {"MDD", r.max_drawdown},
        {"strategy_return", r.annualized_return},
        {"benchmark_return", r.benchmark_return},
        {"turnover", r.turnover},
        {"cost_paid", r.cost_paid},
        {"final_equity", r.equity.empty() ? 1.0 : r.equity.back()},
    };
    if (r.ic) j["ic"] = to_json(*r.ic);
    if (include_series) {
        j["equity"] = r.equity;
        j["benchmark"] = r.benchmark;
        if (r.ic) {
            j["ic_series"] = r.ic->ic;
            j["rank_ic_series"] = r.ic->rank_ic;
        }
    }
    return j;
}

void write_equity_csv(const BacktestReport& r, std::ostream& out) {
    out << "date,equity,benchmark,turnover\n";
    char buf[128];
    for (std::size_t i = 0; i < r.equity.size(); ++i) {
        std::snprintf(buf, sizeof buf, ",%.12g,%.12g,%.12g\n", r.equity[i], r.benchmark[i], r.daily_turnover[i]);
        out << format_date(r.dates[i]) << buf;
    }
}

void write_equity_svg(const BacktestReport& r, std::ostream& out, const std::string& title) {
    constexpr double W = 800, H = 400, pad = 50;
    double lo = 1.0, hi = 1.0;
    for (std::size_t i = 0; i < r.equity.size(); ++i) {
        lo = std::min({lo, r.equity[i], r.benchmark[i]});
        hi = std::max({hi, r.equity[i], r.benchmark[i]});
    }
    if (hi - lo < 1e-9) hi = lo + 1e-9;
    const double n = std::max<double>(1.0, static_cast<double>(r.equity.size()) - 1.0);
    auto px = [&](std::size_t i) { return pad + (W - 2 * pad) * static_cast<double>(i) / n; };
    auto py = [&](double v) { return H - pad - (H - 2 * pad) * (v - lo) / (hi - lo); };
    auto polyline = [&](const std::vector<double>& ys, const char* colour) {
        out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
        char buf[64];
        for (std::size_t i = 0; i < ys.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", px(i), py(ys[i]));
            out << buf;
        }
        out << "\"/>\n";
    };
    char buf[256];
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"400\" viewBox=\"0 0 800 400\">\n";
    out << "<rect width=\"800\" height=\"400\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.0f\" y1=\"%.0f\" x2=\"%.0f\" y2=\"%.0f\" stroke=\"black\"/>\n"
                  "<line x1=\"%.0f\" y1=\"%.0f\" x2=\"%.0f\" y2=\"%.0f\" stroke=\"black\"/>\n",
                  pad, H - pad, W - pad, H - pad, pad, pad, pad, H - pad);
    out << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"5\" y=\"%.2f\" font-size=\"11\">%.3f</text>\n"
                  "<text x=\"5\" y=\"%.2f\" font-size=\"11\">%.3f</text>\n",
                  py(hi) + 4, hi, py(lo) + 4, lo);
    out << buf;
    std::string escaped;
    for (char ch : title) {
        if (ch == '<') escaped += "&lt;";
        else if (ch == '>') escaped += "&gt;";
        else if (ch == '&') escaped += "&amp;";
        else escaped += ch;
    }
    out << "<text x=\"400\" y=\"25\" font-size=\"14\" text-anchor=\"middle\">" << escaped << "</text>\n";
    if (!r.dates.empty()) {
        out << "<text x=\"50\" y=\"370\" font-size=\"11\">" << format_date(r.dates.front()) << "</text>\n";
        out << "<text x=\"750\" y=\"370\" font-size=\"11\" text-anchor=\"end\">" << format_date(r.dates.back())
            << "</text>\n";
    }
    polyline(r.benchmark, "#888888");
    polyline(r.equity, "#1f77b4");
    out << "<text x=\"60\" y=\"45\" font-size=\"11\" fill=\"#1f77b4\">strategy</text>\n";
    out << "<text x=\"60\" y=\"60\" font-size=\"11\" fill=\"#888888\">benchmark</text>\n";
    out << "</svg>\n";
}

} // namespace alphamine
