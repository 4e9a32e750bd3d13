#include "alphamine/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <string_view>
#include <vector>

namespace alphamine {

namespace {

// ---------------------------------------------------------------------------
// Parallel drivers. Each iteration writes a disjoint row or column, so any
// schedule reproduces the serial result bit for bit.

template <class Fn>
void for_each_index(std::size_t n, bool parallel, Fn&& fn) {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (parallel)
    for (std::ptrdiff_t i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
}

Matrix like(const Matrix& shape) { return Matrix(shape.rows(), shape.cols()); }

Matrix constant_matrix(std::size_t rows, std::size_t cols, double v) {
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) m.set(r, c, v);
    return m;
}

template <class Fn>
Matrix map_unary(const Matrix& x, bool par, Fn fn) {
    Matrix out = like(x);
    for_each_index(x.rows(), par, [&](std::size_t r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            if (x.valid(r, c)) out.set(r, c, fn(x.value(r, c)));
        }
    });
    return out;
}

template <class Fn>
Matrix map_binary(const Matrix& a, const Matrix& b, bool par, Fn fn) {
    Matrix out = like(a);
    for_each_index(a.rows(), par, [&](std::size_t r) {
        for (std::size_t c = 0; c < a.cols(); ++c) {
            if (a.valid(r, c) && b.valid(r, c)) out.set(r, c, fn(a.value(r, c), b.value(r, c)));
        }
    });
    return out;
}

Matrix select_if(const Matrix& cond, const Matrix& a, const Matrix& b, bool par) {
    Matrix out = like(cond);
    for_each_index(cond.rows(), par, [&](std::size_t r) {
        for (std::size_t c = 0; c < cond.cols(); ++c) {
            if (!cond.valid(r, c)) continue;
            const Matrix& pick = cond.value(r, c) > 0.0 ? a : b;
            if (pick.valid(r, c)) out.set(r, c, pick.value(r, c));
        }
    });
    return out;
}

// Applies `fn` to every full window of length w; windows touching a missing
// cell produce missing.
template <class Fn>
Matrix rolling(const Matrix& x, std::size_t w, bool par, Fn fn) {
    Matrix out = like(x);
    for_each_index(x.rows(), par, [&](std::size_t r) {
        const auto vals = x.row_values(r);
        const auto mask = x.row_mask(r);
        std::size_t run = 0;   // consecutive valid cells ending at c
        for (std::size_t c = 0; c < x.cols(); ++c) {
            run = mask[c] ? run + 1 : 0;
            if (run >= w) out.set(r, c, fn(vals.subspan(c + 1 - w, w)));
        }
    });
    return out;
}

double window_min(std::span<const double> v) { return *std::min_element(v.begin(), v.end()); }
double window_max(std::span<const double> v) { return *std::max_element(v.begin(), v.end()); }

double window_sum(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

double window_mean(std::span<const double> v) { return window_sum(v) / static_cast<double>(v.size()); }

double window_std(std::span<const double> v) {
    const double m = window_mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

// Average rank of the last element within the window, scaled to [0, 1].
double window_last_rank(std::span<const double> v) {
    if (v.size() == 1) return 0.5;
    const double last = v.back();
    double less = 0.0;
    double equal = 0.0;
    for (double x : v) {
        if (x < last) less += 1.0;
        else if (x == last) equal += 1.0;
    }
    const double rank = less + (equal + 1.0) / 2.0;   // 1-based average rank
    return (rank - 1.0) / static_cast<double>(v.size() - 1);
}

Matrix rolling_corr(const Matrix& x, const Matrix& y, std::size_t w, bool par) {
    Matrix out = like(x);
    for_each_index(x.rows(), par, [&](std::size_t r) {
        const auto xv = x.row_values(r);
        const auto yv = y.row_values(r);
        std::size_t run = 0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            run = (x.valid(r, c) && y.valid(r, c)) ? run + 1 : 0;
            if (run < w) continue;
            const auto a = xv.subspan(c + 1 - w, w);
            const auto b = yv.subspan(c + 1 - w, w);
            const double ma = window_mean(a);
            const double mb = window_mean(b);
            double sab = 0.0, saa = 0.0, sbb = 0.0;
            for (std::size_t k = 0; k < w; ++k) {
                sab += (a[k] - ma) * (b[k] - mb);
                saa += (a[k] - ma) * (a[k] - ma);
                sbb += (b[k] - mb) * (b[k] - mb);
            }
            if (saa > 0.0 && sbb > 0.0) out.set(r, c, sab / std::sqrt(saa * sbb));
        }
    });
    return out;
}

Matrix lagged(const Matrix& x, std::size_t d, bool difference, bool par) {
    Matrix out = like(x);
    for_each_index(x.rows(), par, [&](std::size_t r) {
        for (std::size_t c = d; c < x.cols(); ++c) {
            if (!x.valid(r, c - d)) continue;
            if (!difference) {
                out.set(r, c, x.value(r, c - d));
            } else if (x.valid(r, c)) {
                out.set(r, c, x.value(r, c) - x.value(r, c - d));
            }
        }
    });
    return out;
}

// EMA with smoothing 2/(w+1), seeded by the first full-window SMA. A missing
// input breaks the chain; it restarts once w consecutive values are present.
Matrix ema(const Matrix& x, std::size_t w, bool par) {
    const double alpha = 2.0 / (static_cast<double>(w) + 1.0);
    Matrix out = like(x);
    for_each_index(x.rows(), par, [&](std::size_t r) {
        const auto vals = x.row_values(r);
        std::size_t run = 0;
        double prev = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            run = x.valid(r, c) ? run + 1 : 0;
            if (run < w) continue;
            prev = run == w ? window_mean(vals.subspan(c + 1 - w, w))
                            : alpha * vals[c] + (1.0 - alpha) * prev;
            out.set(r, c, prev);
        }
    });
    return out;
}

std::size_t window_arg(const Node& n) {
    return static_cast<std::size_t>(n.children().back()->value());
}

Matrix eval_node(const Node& n, const Panel& p, bool par) {
    switch (n.kind()) {
    case NodeKind::feature: {
        Matrix m = p.field(n.feature());
        return m;
    }
    case NodeKind::constant:
        return constant_matrix(p.n_symbols(), p.n_dates(), n.value());
    case NodeKind::op:
        break;
    }

    const std::string& op = n.op().name;
    const auto kids = n.children();
    auto arg = [&](std::size_t i) { return eval_node(*kids[i], p, par); };

    if (op == "ADD") return map_binary(arg(0), arg(1), par, [](double a, double b) { return a + b; });
    if (op == "SUB") return map_binary(arg(0), arg(1), par, [](double a, double b) { return a - b; });
    if (op == "MUL") return map_binary(arg(0), arg(1), par, [](double a, double b) { return a * b; });
    if (op == "DIV") return map_binary(arg(0), arg(1), par, [](double a, double b) { return a / b; });
    if (op == "ABS") return map_unary(arg(0), par, [](double a) { return std::fabs(a); });
    if (op == "LOG") return map_unary(arg(0), par, [](double a) { return std::log(a); });
    if (op == "NEG") return map_unary(arg(0), par, [](double a) { return -a; });
    if (op == "SIGN") {
        return map_unary(arg(0), par, [](double a) { return a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0); });
    }
    if (op == "POW") {
        const double e = kids[1]->value();
        return map_unary(arg(0), par, [e](double a) { return std::pow(a, e); });
    }
    if (op == "GT") return map_binary(arg(0), arg(1), par, [](double a, double b) { return a > b ? 1.0 : 0.0; });
    if (op == "LT") return map_binary(arg(0), arg(1), par, [](double a, double b) { return a < b ? 1.0 : 0.0; });
    if (op == "IF") return select_if(arg(0), arg(1), arg(2), par);

    if (op == "RANK") return rank_cross_section(arg(0), {par});
    if (op == "ZSCORE") return zscore_cross_section(arg(0), {par});

    const std::size_t w = window_arg(n);
    if (op == "TS_MIN") return rolling(arg(0), w, par, window_min);
    if (op == "TS_MAX") return rolling(arg(0), w, par, window_max);
    if (op == "TS_SUM") return rolling(arg(0), w, par, window_sum);
    if (op == "SMA") return rolling(arg(0), w, par, window_mean);
    if (op == "TS_STD") return rolling(arg(0), w, par, window_std);
    if (op == "TS_RANK") return rolling(arg(0), w, par, window_last_rank);
    if (op == "EMA") return ema(arg(0), w, par);
    if (op == "TS_CORR") return rolling_corr(arg(0), arg(1), w, par);
    if (op == "DELAY") return lagged(arg(0), w, false, par);
    if (op == "DELTA") return lagged(arg(0), w, true, par);

    throw Error("no kernel for operator " + op);
}

} // namespace

FactorMatrix evaluate(const FactorExpr& expr, const Panel& panel, EvalOptions opts) {
    if (expr.root().max_window() > panel.n_dates()) {
        throw WindowError("window " + std::to_string(expr.root().max_window()) + " exceeds panel length " +
                          std::to_string(panel.n_dates()));
    }
    FactorMatrix out = eval_node(expr.root(), panel, opts.parallel);
    out.name = print(expr);
    return out;
}

FactorMatrix zscore_cross_section(const FactorMatrix& m, EvalOptions opts) {
    FactorMatrix out = like(m);
    out.name = m.name;
    for_each_index(m.cols(), opts.parallel, [&](std::size_t c) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            if (m.valid(r, c)) {
                sum += m.value(r, c);
                ++n;
            }
        }
        if (n < 2) return;
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            if (m.valid(r, c)) ss += (m.value(r, c) - mean) * (m.value(r, c) - mean);
        }
        const double sd = std::sqrt(ss / static_cast<double>(n));
        if (!(sd > 0.0)) return;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            if (m.valid(r, c)) out.set(r, c, (m.value(r, c) - mean) / sd);
        }
    });
    return out;
}

FactorMatrix rank_cross_section(const FactorMatrix& m, EvalOptions opts) {
    FactorMatrix out = like(m);
    out.name = m.name;
    for_each_index(m.cols(), opts.parallel, [&](std::size_t c) {
        std::vector<std::pair<double, std::size_t>> cells;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            if (m.valid(r, c)) cells.emplace_back(m.value(r, c), r);
        }
        if (cells.empty()) return;
        if (cells.size() == 1) {
            out.set(cells[0].second, c, 0.5);
            return;
        }
        std::sort(cells.begin(), cells.end());
        const double denom = static_cast<double>(cells.size() - 1);
        for (std::size_t i = 0; i < cells.size();) {
            std::size_t j = i;
            while (j + 1 < cells.size() && cells[j + 1].first == cells[i].first) ++j;
            // 0-based average rank of the tie group [i, j]
            const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0;
            for (std::size_t k = i; k <= j; ++k) out.set(cells[k].second, c, rank / denom);
            i = j + 1;
        }
    });
    return out;
}

void write_factor_csv(const FactorMatrix& m, const Panel& panel, std::ostream& out) {
    out << "date";
    for (const auto& s : panel.symbols) out << ',' << s;
    out << '\n';
    char buf[64];
    for (std::size_t c = 0; c < m.cols(); ++c) {
        out << format_date(panel.dates[c]);
        for (std::size_t r = 0; r < m.rows(); ++r) {
            out << ',';
            if (m.valid(r, c)) {
                auto [p, ec] = std::to_chars(buf, buf + sizeof buf, m.value(r, c));
                (void)ec;
                out << std::string_view(buf, static_cast<std::size_t>(p - buf));
            }
        }
        out << '\n';
    }
}

} // namespace alphamine
