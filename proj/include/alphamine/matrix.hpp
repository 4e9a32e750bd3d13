#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace alphamine {

// Dense (symbol x date) matrix with a validity mask. Row-major: one row per
// symbol. Invalid cells always hold 0.0, and non-finite values are never
// stored: set() masks them.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), values_(rows * cols, 0.0), valid_(rows * cols, 0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool valid(std::size_t r, std::size_t c) const { return valid_[r * cols_ + c] != 0; }
    double value(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
    std::optional<double> get(std::size_t r, std::size_t c) const {
        if (!valid(r, c)) return std::nullopt;
        return value(r, c);
    }

    void set(std::size_t r, std::size_t c, double v) {
        const std::size_t i = r * cols_ + c;
        if (std::isfinite(v)) {
            values_[i] = v;
            valid_[i] = 1;
        } else {
            values_[i] = 0.0;
            valid_[i] = 0;
        }
    }
    void set_missing(std::size_t r, std::size_t c) {
        const std::size_t i = r * cols_ + c;
        values_[i] = 0.0;
        valid_[i] = 0;
    }

    std::span<const double> row_values(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
    std::span<const std::uint8_t> row_mask(std::size_t r) const { return {valid_.data() + r * cols_, cols_}; }
    std::span<const double> values() const { return values_; }
    std::span<const std::uint8_t> mask() const { return valid_; }

    std::size_t valid_count() const {
        std::size_t n = 0;
        for (auto v : valid_) n += v;
        return n;
    }

    // Columns [begin, end) as a new matrix.
    Matrix slice_cols(std::size_t begin, std::size_t end) const {
        Matrix out(rows_, end - begin);
        out.name = name;
        for (std::size_t r = 0; r < rows_; ++r) {
            for (std::size_t c = begin; c < end; ++c) {
                if (valid(r, c)) out.set(r, c - begin, value(r, c));
            }
        }
        return out;
    }

    // Exact equality of mask and values (bitwise on doubles via ==).
    bool identical(const Matrix& o) const {
        return same_shape(o) && valid_ == o.valid_ && values_ == o.values_;
    }

    // Provenance: the expression text or feature name that produced the data.
    std::string name;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
    std::vector<std::uint8_t> valid_;
};

using FactorMatrix = Matrix;
using ReturnMatrix = Matrix;
using ScoreMatrix = Matrix;

} // namespace alphamine
