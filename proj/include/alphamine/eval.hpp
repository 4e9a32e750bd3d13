#pragma once

#include <iosfwd>

#include "alphamine/dsl.hpp"
#include "alphamine/error.hpp"
#include "alphamine/matrix.hpp"
#include "alphamine/panel.hpp"

namespace alphamine {

class WindowError : public Error {
public:
    using Error::Error;
};

struct EvalOptions {
    // OpenMP fan-out: rows for time-series operators, columns for
    // cross-sectional ones. Results are bit-identical either way.
    bool parallel = true;
};

// Post-order evaluation of `expr` over `panel`. Non-finite intermediate values
// become missing. Throws WindowError if any window exceeds the panel length.
FactorMatrix evaluate(const FactorExpr& expr, const Panel& panel, EvalOptions opts = {});

// Per date: (x - mean) / population std over valid entries. Dates with fewer
// than two valid entries, or zero dispersion, come out all-missing.
FactorMatrix zscore_cross_section(const FactorMatrix& m, EvalOptions opts = {});

// Per date: average ranks of valid entries min-max scaled to [0, 1]. A lone
// valid entry maps to 0.5.
FactorMatrix rank_cross_section(const FactorMatrix& m, EvalOptions opts = {});

// Wide CSV: header `date,<symbols...>`, one row per date, empty cell = missing.
void write_factor_csv(const FactorMatrix& m, const Panel& panel, std::ostream& out);

namespace reference {

// Serial cell-by-cell evaluator kept as an independent oracle for the kernels.
// Slow; use on small panels only.
FactorMatrix evaluate(const FactorExpr& expr, const Panel& panel);

} // namespace reference

} // namespace alphamine
