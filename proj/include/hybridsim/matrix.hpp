#pragma once

#include <cstddef>
#include <vector>

namespace hybridsim {

// Dense row-major matrix of doubles. All decoder arithmetic runs in double
// precision; fp16 exists only in byte accounting.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

    bool operator==(const Matrix&) const = default;
};

// a[n x k] * b[k x m]. Parallelized over output rows; each row's accumulation
// order is fixed, so the result is bit-identical to matmul_serial.
Matrix matmul(const Matrix& a, const Matrix& b);

// Plain triple-loop reference path, kept for tests and the benchmark.
Matrix matmul_serial(const Matrix& a, const Matrix& b);

void relu_inplace(Matrix& m);

// Rows [row_begin, row_end) as a copy.
Matrix slice_rows(const Matrix& m, int row_begin, int row_end);

// Stack b's rows under a's. Column counts must match.
Matrix concat_rows(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& m);

}  // namespace hybridsim
