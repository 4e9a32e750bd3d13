#include "alphamine/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "alphamine/eval.hpp"
#include "alphamine/regularizer.hpp"

namespace alphamine {

std::vector<Date> weekday_calendar(Date start, std::size_t n) {
    using namespace std::chrono;
    std::vector<Date> out;
    out.reserve(n);
    for (Date d = start; out.size() < n; d += days{1}) {
        const weekday wd{d};
        if (wd != Saturday && wd != Sunday) out.push_back(d);
    }
    return out;
}

Panel make_synthetic_panel(const SyntheticSpec& spec) {
    const std::size_t n = spec.symbols;
    const std::size_t T = spec.days;
    std::vector<std::string> names;
    for (std::size_t s = 0; s < n; ++s) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "S%04zu", s);
        names.emplace_back(buf);
    }
    Panel p = Panel::empty(std::move(names), weekday_calendar(parse_date(spec.start_date), T));

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Log volume: per-symbol level plus a persistent AR(1) component.
    Matrix& volume = p.field(Feature::volume);
    const double phi = spec.volume_persistence;
    const double innov = std::sqrt(1.0 - phi * phi) * 0.5;
    for (std::size_t s = 0; s < n; ++s) {
        const double level = 13.0 + 0.5 * normal(rng);
        double x = 0.5 * normal(rng);
        for (std::size_t t = 0; t < T; ++t) {
            x = phi * x + innov * normal(rng);
            volume.set(s, t, std::round(std::exp(level + x)));
        }
    }

    Matrix signal(n, T);
    if (!spec.planted_expr.empty()) {
        const FactorExpr planted = parse(spec.planted_expr);
        const auto used = feature_set(planted);
        if (used.size() != 1 || *used.begin() != Feature::volume) {
            throw ConfigError("planted expression must read only $volume");
        }
        // Prices are irrelevant to a volume-only expression; fill placeholders
        // so the panel is valid for evaluation.
        Panel scratch = p;
        for (Feature f : {Feature::open, Feature::high, Feature::low, Feature::close}) {
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t t = 0; t < T; ++t) scratch.field(f).set(s, t, 1.0);
        }
        signal = zscore_cross_section(evaluate(planted, scratch));
    }

    Matrix& open = p.field(Feature::open);
    Matrix& high = p.field(Feature::high);
    Matrix& low = p.field(Feature::low);
    Matrix& close = p.field(Feature::close);
    for (std::size_t s = 0; s < n; ++s) {
        double c = 20.0 + 80.0 * std::abs(normal(rng)) / 2.0;
        double prev_close = c;
        for (std::size_t t = 0; t < T; ++t) {
            if (t > 0) {
                const double eps = normal(rng);
                const double r = signal.valid(s, t - 1)
                                     ? spec.return_scale * (signal.value(s, t - 1) + spec.noise_ratio * eps)
                                     : spec.return_scale * eps;
                c = prev_close * (1.0 + r);
            }
            const double o = prev_close * (1.0 + 0.002 * normal(rng));
            const double hi = std::max(o, c) * (1.0 + 0.003 * std::abs(normal(rng)));
            const double lo = std::min(o, c) * (1.0 - 0.003 * std::abs(normal(rng)));
            open.set(s, t, o);
            high.set(s, t, hi);
            low.set(s, t, lo);
            close.set(s, t, c);
            prev_close = c;
        }
    }
    return p;
}

} // namespace alphamine
