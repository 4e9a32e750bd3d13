// Cell-at-a-time evaluator. Shares no code with the kernels in eval.cpp; tests
// use it as the oracle for the vectorised/parallel path.

#include "alphamine/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <vector>

namespace alphamine::reference {

namespace {

using Cell = std::optional<double>;

Cell finite(double v) {
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

class CellEvaluator {
public:
    explicit CellEvaluator(const Panel& p) : p_(p) {}

    Cell at(const Node& n, std::size_t s, std::size_t t) {
        auto& memo = memo_[&n];
        if (memo.empty()) memo.assign(p_.n_symbols() * p_.n_dates(), Slot{});
        Slot& slot = memo[s * p_.n_dates() + t];
        if (!slot.done) {
            slot.value = compute(n, s, t);
            slot.done = true;
        }
        return slot.value;
    }

private:
    struct Slot {
        bool done = false;
        Cell value;
    };

    std::optional<std::vector<double>> window(const Node& n, std::size_t s, std::size_t t, std::size_t w) {
        if (t + 1 < w) return std::nullopt;
        std::vector<double> out;
        for (std::size_t k = t + 1 - w; k <= t; ++k) {
            Cell v = at(n, s, k);
            if (!v) return std::nullopt;
            out.push_back(*v);
        }
        return out;
    }

    static double mean_of(const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    }

    static double pop_std(const std::vector<double>& v) {
        const double m = mean_of(v);
        double acc = 0.0;
        for (double x : v) acc += (x - m) * (x - m);
        return std::sqrt(acc / static_cast<double>(v.size()));
    }

    // 1-based average rank of `x` among `pool` (x must be in pool).
    static double average_rank(const std::vector<double>& pool, double x) {
        std::vector<double> sorted = pool;
        std::sort(sorted.begin(), sorted.end());
        const auto lo = std::lower_bound(sorted.begin(), sorted.end(), x) - sorted.begin();
        const auto hi = std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin();
        return (static_cast<double>(lo + 1) + static_cast<double>(hi)) / 2.0;
    }

    Cell ema_at(const Node& x, std::size_t w, std::size_t s, std::size_t t) {
        auto win = window(x, s, t, w);
        if (!win) return std::nullopt;
        const double alpha = 2.0 / (static_cast<double>(w) + 1.0);
        // Walk back to the start of the valid run containing t.
        std::size_t start = t;
        while (start > 0 && at(x, s, start - 1)) --start;
        const std::size_t seed_at = start + w - 1;
        auto seed = window(x, s, seed_at, w);
        double e = mean_of(*seed);
        for (std::size_t k = seed_at + 1; k <= t; ++k) e = alpha * *at(x, s, k) + (1.0 - alpha) * e;
        return e;
    }

    Cell compute(const Node& n, std::size_t s, std::size_t t) {
        if (n.kind() == NodeKind::feature) return p_.field(n.feature()).get(s, t);
        if (n.kind() == NodeKind::constant) return n.value();

        const std::string& op = n.op().name;
        const auto kids = n.children();
        auto child = [&](std::size_t i) { return at(*kids[i], s, t); };
        auto win_len = [&] { return static_cast<std::size_t>(kids.back()->value()); };

        if (op == "ADD" || op == "SUB" || op == "MUL" || op == "DIV" || op == "GT" || op == "LT") {
            Cell a = child(0), b = child(1);
            if (!a || !b) return std::nullopt;
            if (op == "ADD") return finite(*a + *b);
            if (op == "SUB") return finite(*a - *b);
            if (op == "MUL") return finite(*a * *b);
            if (op == "DIV") return *b == 0.0 ? std::nullopt : finite(*a / *b);
            if (op == "GT") return *a > *b ? 1.0 : 0.0;
            return *a < *b ? 1.0 : 0.0;
        }
        if (op == "ABS" || op == "LOG" || op == "NEG" || op == "SIGN" || op == "POW") {
            Cell a = child(0);
            if (!a) return std::nullopt;
            if (op == "ABS") return std::abs(*a);
            if (op == "LOG") return *a > 0.0 ? finite(std::log(*a)) : std::nullopt;
            if (op == "NEG") return -*a;
            if (op == "SIGN") return static_cast<double>((*a > 0.0) - (*a < 0.0));
            return finite(std::pow(*a, kids[1]->value()));
        }
        if (op == "IF") {
            Cell c = child(0);
            if (!c) return std::nullopt;
            return *c > 0.0 ? child(1) : child(2);
        }
        if (op == "RANK" || op == "ZSCORE") {
            std::vector<double> xs;
            for (std::size_t k = 0; k < p_.n_symbols(); ++k) {
                if (Cell v = at(*kids[0], k, t)) xs.push_back(*v);
            }
            Cell self = child(0);
            if (!self) return std::nullopt;
            if (op == "RANK") {
                if (xs.size() == 1) return 0.5;
                return (average_rank(xs, *self) - 1.0) / static_cast<double>(xs.size() - 1);
            }
            if (xs.size() < 2) return std::nullopt;
            const double sd = pop_std(xs);
            if (sd == 0.0) return std::nullopt;
            return finite((*self - mean_of(xs)) / sd);
        }

        const std::size_t w = win_len();
        if (op == "DELAY") return t >= w ? at(*kids[0], s, t - w) : std::nullopt;
        if (op == "DELTA") {
            if (t < w) return std::nullopt;
            Cell now = child(0), then = at(*kids[0], s, t - w);
            if (!now || !then) return std::nullopt;
            return finite(*now - *then);
        }
        if (op == "EMA") return ema_at(*kids[0], w, s, t);
        if (op == "TS_CORR") {
            auto a = window(*kids[0], s, t, w);
            auto b = window(*kids[1], s, t, w);
            if (!a || !b) return std::nullopt;
            const double sa = pop_std(*a), sb = pop_std(*b);
            if (sa == 0.0 || sb == 0.0) return std::nullopt;
            const double ma = mean_of(*a), mb = mean_of(*b);
            double cov = 0.0;
            for (std::size_t k = 0; k < w; ++k) cov += ((*a)[k] - ma) * ((*b)[k] - mb);
            cov /= static_cast<double>(w);
            return finite(cov / (sa * sb));
        }
        auto win = window(*kids[0], s, t, w);
        if (!win) return std::nullopt;
        if (op == "TS_MIN") return *std::min_element(win->begin(), win->end());
        if (op == "TS_MAX") return *std::max_element(win->begin(), win->end());
        if (op == "TS_SUM") return finite(std::accumulate(win->begin(), win->end(), 0.0));
        if (op == "SMA") return finite(mean_of(*win));
        if (op == "TS_STD") return finite(pop_std(*win));
        if (op == "TS_RANK") {
            if (w == 1) return 0.5;
            return (average_rank(*win, win->back()) - 1.0) / static_cast<double>(w - 1);
        }
        throw Error("reference evaluator: unknown operator " + op);
    }

    const Panel& p_;
    std::unordered_map<const Node*, std::vector<Slot>> memo_;
};

} // namespace

FactorMatrix evaluate(const FactorExpr& expr, const Panel& panel) {
    if (expr.root().max_window() > panel.n_dates()) {
        throw WindowError("window exceeds panel length");
    }
    CellEvaluator ev(panel);
    FactorMatrix out(panel.n_symbols(), panel.n_dates());
    out.name = print(expr);
    for (std::size_t s = 0; s < panel.n_symbols(); ++s) {
        for (std::size_t t = 0; t < panel.n_dates(); ++t) {
            if (Cell v = ev.at(expr.root(), s, t)) out.set(s, t, *v);
        }
    }
    return out;
}

} // namespace alphamine::reference
