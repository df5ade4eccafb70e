// Dense row-major f64 matrices and the few free functions everything else builds on.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefalign {

struct Array2D {
    int rows{0};
    int cols{0};
    std::vector<double> data;  // row-major, size == rows * cols

    Array2D() = default;
    Array2D(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
        if (r < 0 || c < 0) {
            throw std::invalid_argument("Array2D: negative shape");
        }
    }

    static Array2D from_rows(const std::vector<std::vector<double>>& rows_in) {
        if (rows_in.empty()) {
            return {};
        }
        Array2D out(static_cast<int>(rows_in.size()), static_cast<int>(rows_in[0].size()));
        for (int r = 0; r < out.rows; ++r) {
            if (static_cast<int>(rows_in[r].size()) != out.cols) {
                throw std::invalid_argument("Array2D::from_rows: ragged rows");
            }
            std::copy(rows_in[r].begin(), rows_in[r].end(), out.row_ptr(r));
        }
        return out;
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    double* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return data.size(); }
    bool same_shape(const Array2D& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }
};

inline Array2D matmul(const Array2D& a, const Array2D& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: inner dimensions disagree (" + std::to_string(a.cols) + " vs " +
                                    std::to_string(b.rows) + ")");
    }
    Array2D out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) {
                continue;
            }
            const double* brow = b.row_ptr(k);
            for (int j = 0; j < b.cols; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    return out;
}

inline Array2D transpose(const Array2D& a) {
    Array2D out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) {
            out.at(j, i) = a.at(i, j);
        }
    }
    return out;
}

// Stable log-softmax of a flat vector. exp of the result sums to 1 within 1e-9.
inline std::vector<double> softmax_logprobs(const std::vector<double>& logits) {
    if (logits.empty()) {
        throw std::invalid_argument("softmax_logprobs: empty input");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) {
        sum += std::exp(v - m);
    }
    const double lse = m + std::log(sum);
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] - lse;
    }
    return out;
}

// In-place log-softmax over each row of a matrix.
inline void log_softmax_rows(Array2D& a) {
    for (int r = 0; r < a.rows; ++r) {
        double* row = a.row_ptr(r);
        const double m = *std::max_element(row, row + a.cols);
        double sum = 0.0;
        for (int c = 0; c < a.cols; ++c) {
            sum += std::exp(row[c] - m);
        }
        const double lse = m + std::log(sum);
        for (int c = 0; c < a.cols; ++c) {
            row[c] -= lse;
        }
    }
}

inline double log_sigmoid(double z) {
    // log(1/(1+e^-z)): evaluate on the side that cannot overflow.
    if (z >= 0.0) {
        return -std::log1p(std::exp(-z));
    }
    return z - std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size() && i < b.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

}  // namespace prefalign
