#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "alphamine/backtest.hpp"
#include "alphamine/eval.hpp"
#include "alphamine/synthetic.hpp"

using namespace alphamine;

namespace {

Panel random_walk_panel(std::uint64_t seed, std::size_t symbols, std::size_t days) {
    SyntheticSpec spec;
    spec.symbols = symbols;
    spec.days = days;
    spec.seed = seed;
    spec.planted_expr.clear();
    return make_synthetic_panel(spec);
}

// Scores dated t-1 that equal the return earned over the holding period
// starting at the t fill, i.e. the label at t.
ScoreMatrix foresight_scores(const Panel& p) {
    const ReturnMatrix r = next_day_returns(p);
    ScoreMatrix s(p.n_symbols(), p.n_dates());
    for (std::size_t i = 0; i < p.n_symbols(); ++i)
        for (std::size_t t = 0; t + 1 < p.n_dates(); ++t)
            if (r.valid(i, t + 1)) s.set(i, t, r.value(i, t + 1));
    return s;
}

double sample_sd(const std::vector<double>& v) {
    // Welford
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - mean;
        mean += d / static_cast<double>(i + 1);
        m2 += d * (v[i] - mean);
    }
    return std::sqrt(m2 / static_cast<double>(v.size() - 1));
}

} // namespace

TEST_CASE("ridge matches the two-feature closed form") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    Matrix a(30, 20), b(30, 20), y(30, 20);
    double saa = 0, sbb = 0, sab = 0, say = 0, sby = 0;
    for (std::size_t r = 0; r < 30; ++r) {
        for (std::size_t c = 0; c < 20; ++c) {
            if ((r + c) % 11 == 0) continue;   // leave some rows out
            const double x1 = n01(rng), x2 = n01(rng), e = n01(rng);
            a.set(r, c, x1);
            b.set(r, c, x2);
            y.set(r, c, 0.7 * x1 - 0.2 * x2 + 0.1 * e);
            saa += x1 * x1;
            sbb += x2 * x2;
            sab += x1 * x2;
            say += x1 * y.value(r, c);
            sby += x2 * y.value(r, c);
        }
    }
    for (double lambda : {0.0, 0.5, 25.0}) {
        const double p = saa + lambda, q = sbb + lambda, det = p * q - sab * sab;
        const double w1 = (q * say - sab * sby) / det;
        const double w2 = (p * sby - sab * say) / det;
        const Combiner c = fit_combiner({&a, &b}, y, lambda);
        CHECK(c.coefficients[0] == doctest::Approx(w1).epsilon(1e-12));
        CHECK(c.coefficients[1] == doctest::Approx(w2).epsilon(1e-12));
    }
    const ScoreMatrix s = score(fit_combiner({&a, &b}, y, 0.0), {&a, &b}, 5, 10);
    CHECK(s.cols() == 5);
    CHECK_FALSE(s.valid(6, 0));   // (6 + 5) % 11 == 0 was left out
}

TEST_CASE("ridge on a rank deficient design") {
    Matrix a(5, 5), y(5, 5);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 5; ++c) {
            a.set(r, c, static_cast<double>(r + c));
            y.set(r, c, static_cast<double>(r));
        }
    CHECK_THROWS_AS(fit_combiner({&a, &a}, y, 0.0), SingularError);
    const Combiner c = fit_combiner({&a, &a}, y, 1.0);
    CHECK(c.coefficients[0] == doctest::Approx(c.coefficients[1]));
    CHECK(equal_weight_combiner(4).coefficients[2] == 0.25);
}

TEST_CASE("correlations") {
    const std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8.5};
    const double mx = 2.5, my = 5.125;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 4; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    CHECK(pearson(x, y) == doctest::Approx(sxy / std::sqrt(sxx * syy)).epsilon(1e-14));
    CHECK(spearman(x, y) == doctest::Approx(1.0).epsilon(1e-14));
    const std::vector<double> ties{3, 1, 3, 2};
    CHECK(average_ranks(ties) == std::vector<double>{3.5, 1, 3.5, 2});
    const std::vector<double> flat{1, 1, 1, 1};
    CHECK(std::isnan(pearson(x, flat)));
}

TEST_CASE("ICIR equals mean over sample std on a fixed 250-day series") {
    std::vector<double> ic(250);
    for (std::size_t i = 0; i < ic.size(); ++i) ic[i] = 0.05 + 0.03 * std::sin(0.37 * static_cast<double>(i)) + 0.001 * static_cast<double>(i % 7);
    const double oracle = std::accumulate(ic.begin(), ic.end(), 0.0) / 250.0 / sample_sd(ic);
    CHECK(std::abs(mean_over_std(ic) - oracle) <= 1e-9);
    const std::vector<double> flat(10, 0.1);
    CHECK_THROWS_AS(mean_over_std(flat), DegenerateError);
    CHECK_THROWS_AS(mean_over_std(std::vector<double>{0.1}), DegenerateError);
}

TEST_CASE("RankIC is one for monotone transforms of returns") {
    const Panel p = random_walk_panel(5, 40, 60);
    const ReturnMatrix r = next_day_returns(p);
    ScoreMatrix s(r.rows(), r.cols());
    for (std::size_t i = 0; i < r.rows(); ++i)
        for (std::size_t t = 0; t < r.cols(); ++t)
            if (r.valid(i, t)) s.set(i, t, std::exp(50.0 * r.value(i, t)) + std::pow(r.value(i, t), 3));
    const IcMetrics m = ic_metrics(s, r);
    CHECK(m.rank_ic.size() == 59);
    for (double v : m.rank_ic) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(m.rank_icir.has_value());   // a constant series has no spread
    REQUIRE(m.icir.has_value());
    CHECK(*m.icir == doctest::Approx(mean_over_std(m.ic)).epsilon(1e-12));
}

TEST_CASE("IC dates need twenty pairs") {
    const Panel p = random_walk_panel(6, 25, 10);
    const ReturnMatrix r = next_day_returns(p);
    ScoreMatrix s = r;
    for (std::size_t i = 0; i < 6; ++i) s.set_missing(i, 3);   // 19 pairs left
    const IcMetrics m = ic_metrics(s, r);
    CHECK(std::find(m.columns.begin(), m.columns.end(), 3u) == m.columns.end());
    CHECK(m.columns.size() == 8);
    CHECK_THROWS_AS(ic_metrics(s, r, 30), DegenerateError);
}

TEST_CASE("random scores have no IC") {
    const Panel p = random_walk_panel(8, 100, 300);
    const ReturnMatrix r = next_day_returns(p);
    std::mt19937_64 rng(99);
    std::normal_distribution<double> n01;
    ScoreMatrix s(r.rows(), r.cols());
    for (std::size_t i = 0; i < r.rows(); ++i)
        for (std::size_t t = 0; t < r.cols(); ++t) s.set(i, t, n01(rng));
    const IcMetrics m = ic_metrics(s, r);
    // 299 dates x 100 names: the standard error of the mean IC is about 0.006
    CHECK(std::abs(m.mean_ic) < 0.03);
    CHECK(std::abs(m.mean_rank_ic) < 0.03);
}

TEST_CASE("fee round trip") {
    Portfolio book(10.0);
    const double buy_fee = book.buy(3, 1.0, 0.0005);
    const double sell_fee = book.sell(3, 0.0015);
    CHECK(buy_fee == doctest::Approx(0.0005).epsilon(1e-15));
    CHECK(sell_fee == doctest::Approx(0.0015).epsilon(1e-15));
    CHECK(std::abs((book.equity() - 10.0) - (-0.002)) <= 1e-12);
    CHECK(std::abs(book.fees_paid() - 0.002) <= 1e-12);
    CHECK(book.positions().empty());
    CHECK(book.sell(3, 0.0015) == 0.0);
    book.buy(1, 2.0, 0.0);
    CHECK(book.mark(1, 1.5) == 1.0);
    CHECK(book.position(1) == 3.0);
}

TEST_CASE("maximum drawdown") {
    CHECK(max_drawdown(std::vector<double>{1.0, 1.2, 0.9, 1.1}) == doctest::Approx(-0.25).epsilon(1e-15));
    CHECK(max_drawdown(std::vector<double>{1.0, 1.01, 1.5, 2.0}) == 0.0);
    const std::vector<double> curve{1.0, 1.3, 0.7, 1.6, 1.2};
    std::vector<double> scaled;
    for (double v : curve) scaled.push_back(v * 7.5);
    CHECK(max_drawdown(scaled) == doctest::Approx(max_drawdown(curve)).epsilon(1e-15));
}

TEST_CASE("hit ratio") {
    std::vector<double> ar(100, 0.01);
    for (std::size_t i = 0; i < 29; ++i) ar[i] = 0.05;
    CHECK(hit_ratio(ar, 0.04) == 0.29);
    CHECK(hit_ratio(ar, 0.0) == 1.0);
    CHECK(hit_ratio(ar, 0.2) == 0.0);
    CHECK_THROWS_AS(hit_ratio(std::vector<double>{}, 0.04), EmptyRunError);
}

TEST_CASE("perfect foresight beats the equal-weight benchmark on 20 panels") {
    StrategyConfig cfg;
    cfg.k = 10;
    cfg.n_drop = 3;
    cfg.buy_fee = cfg.sell_fee = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        CAPTURE(seed);
        const Panel p = random_walk_panel(seed * 31, 50, 120);
        const BacktestReport rep = simulate_topk_dropout(foresight_scores(p), p, cfg);
        CHECK(rep.annualized_return >= rep.benchmark_return);
        CHECK(rep.excess_return > 0.0);
    }
}

TEST_CASE("cash conservation and name turnover bound") {
    StrategyConfig cfg;
    cfg.k = 10;
    cfg.n_drop = 2;
    const Panel p = random_walk_panel(17, 40, 150);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    ScoreMatrix s(p.n_symbols(), p.n_dates());
    for (std::size_t i = 0; i < s.rows(); ++i)
        for (std::size_t t = 0; t < s.cols(); ++t) s.set(i, t, n01(rng));
    const BacktestReport rep = simulate_topk_dropout(s, p, cfg);
    REQUIRE(rep.equity.size() == 150);
    for (std::size_t i = 1; i < rep.equity.size(); ++i) {
        const double change = (rep.equity[i] - rep.equity[i - 1]) * cfg.initial_capital;
        const double expected = rep.daily_pnl[i] - rep.daily_fees[i];
        CHECK(std::abs(change - expected) <= 1e-9 * std::max(1.0, std::abs(rep.equity[i])));
    }
    CHECK(rep.daily_buys[1] == cfg.k);   // the first fill opens the book
    for (std::size_t i = 2; i < rep.equity.size(); ++i) {
        CHECK(rep.daily_sells[i] <= cfg.n_drop);
        CHECK(rep.daily_buys[i] == rep.daily_sells[i]);
        const double name_turnover = static_cast<double>(rep.daily_sells[i] + rep.daily_buys[i]) / static_cast<double>(cfg.k);
        CHECK(name_turnover <= 2.0 * static_cast<double>(cfg.n_drop) / static_cast<double>(cfg.k));
    }
    double fees = 0.0;
    for (double f : rep.daily_fees) fees += f;
    CHECK(rep.cost_paid == doctest::Approx(fees / cfg.initial_capital));
    CHECK(rep.max_drawdown <= 0.0);
}

TEST_CASE("single name with flat prices pays exactly the fees") {
    Panel p = random_walk_panel(2, 1, 4);
    for (Feature f : {Feature::open, Feature::high, Feature::low, Feature::close})
        for (std::size_t t = 0; t < 4; ++t) p.field(f).set(0, t, 10.0);
    StrategyConfig cfg;
    cfg.k = 1;
    cfg.n_drop = 1;
    ScoreMatrix s(1, 4);
    for (std::size_t t = 0; t < 4; ++t) s.set(0, t, 1.0);
    const BacktestReport rep = simulate_topk_dropout(s, p, cfg);
    // one buy of 1/(1+0.0005) at t=1, then the name is held
    CHECK(rep.equity[0] == 1.0);
    CHECK(rep.equity[1] == doctest::Approx(1.0 / 1.0005).epsilon(1e-15));
    CHECK(rep.equity[3] == rep.equity[1]);
    CHECK(rep.benchmark[3] == 1.0);
}

TEST_CASE("configuration errors") {
    const Panel p = random_walk_panel(2, 5, 10);
    StrategyConfig cfg;
    CHECK_THROWS_AS(simulate_topk_dropout(ScoreMatrix(5, 10), p, cfg), UniverseTooSmallError);
    cfg.k = 3;
    cfg.n_drop = 4;
    CHECK_THROWS_AS(simulate_topk_dropout(ScoreMatrix(5, 10), p, cfg), ConfigError);
    cfg.n_drop = 1;
    Benchmark short_bench{{0.01, 0.02}};
    CHECK_THROWS_AS(simulate_topk_dropout(ScoreMatrix(5, 10), p, cfg, short_bench), Error);
    const StrategyConfig parsed = strategy_config_from_json(nlohmann::json::parse(R"({"k": 7, "sell_fee": 0.002})"));
    CHECK(parsed.k == 7);
    CHECK(parsed.sell_fee == 0.002);
    CHECK(parsed.n_drop == 5);
    CHECK(strategy_config_from_json(to_json(parsed)).k == 7);
    CHECK_THROWS_AS(strategy_config_from_json(nlohmann::json::parse(R"({"topk": 7})")), ConfigError);
    CHECK_THROWS_AS(strategy_config_from_json(nlohmann::json::parse(R"({"k": "x"})")), ConfigError);
}

TEST_CASE("custom benchmark series") {
    const Panel p = random_walk_panel(12, 5, 4);
    StrategyConfig cfg;
    cfg.k = 2;
    cfg.n_drop = 1;
    const BacktestReport rep = simulate_topk_dropout(ScoreMatrix(5, 4), p, cfg, Benchmark{{0.1, -0.5, 1.0}});
    CHECK(rep.benchmark[3] == doctest::Approx(1.1 * 0.5 * 2.0));
    CHECK(rep.equity[3] == 1.0);   // no scores, no trades
}

TEST_CASE("planted signal is recovered and exports are deterministic") {
    const Panel p = make_synthetic_panel(SyntheticSpec{});
    const Matrix f = zscore_cross_section(evaluate(parse("SMA(LOG($volume), 3)"), p));
    const ReturnMatrix r = next_day_returns(p);
    const IcMetrics m = ic_metrics(f, r);
    CHECK(m.mean_ic >= 0.8);
    CHECK(m.mean_rank_ic >= 0.75);

    StrategyConfig cfg;
    BacktestReport rep = simulate_topk_dropout(f, p, cfg);
    CHECK(rep.excess_return > 0.0);
    rep.ic = m;
    std::ostringstream a, b, svg;
    write_equity_csv(rep, a);
    write_equity_csv(simulate_topk_dropout(f, p, cfg), b);
    CHECK(a.str() == b.str());
    CHECK(a.str().rfind("date,equity,benchmark,turnover\n", 0) == 0);
    write_equity_svg(rep, svg, "planted <signal>");
    CHECK(svg.str().find("<svg") == 0);
    CHECK(svg.str().find("planted &lt;signal&gt;") != std::string::npos);
    const auto j = to_json(rep, true);
    CHECK(j.at("days") == 600);
    CHECK(j.at("ic").at("IC").get<double>() == m.mean_ic);
    CHECK(j.at("equity").size() == 600);
}
