#include "hybridsim/matrix.hpp"

#include <cmath>

#include "hybridsim/errors.hpp"

namespace hybridsim {

namespace {

inline void matmul_row(const Matrix& a, const Matrix& b, Matrix& out, int i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int k = 0; k < a.cols; ++k) {
        const double av = arow[k];
        const double* brow = b.row(k);
        for (int j = 0; j < b.cols; ++j) {
            orow[j] += av * brow[j];
        }
    }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw InputError("matmul: inner dimensions differ");
    Matrix out(a.rows, b.cols);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.rows; ++i) {
        matmul_row(a, b, out, i);
    }
    return out;
}

Matrix matmul_serial(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw InputError("matmul: inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        matmul_row(a, b, out, i);
    }
    return out;
}

void relu_inplace(Matrix& m) {
    for (double& v : m.data) {
        if (v < 0.0) v = 0.0;
    }
}

Matrix slice_rows(const Matrix& m, int row_begin, int row_end) {
    if (row_begin < 0 || row_end > m.rows || row_begin > row_end)
        throw InputError("slice_rows: range out of bounds");
    Matrix out(row_end - row_begin, m.cols);
    for (int r = row_begin; r < row_end; ++r) {
        for (int c = 0; c < m.cols; ++c) out.at(r - row_begin, c) = m.at(r, c);
    }
    return out;
}

Matrix concat_rows(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols && a.rows != 0 && b.rows != 0)
        throw InputError("concat_rows: column counts differ");
    if (a.rows == 0) return b;
    if (b.rows == 0) return a;
    Matrix out(a.rows + b.rows, a.cols);
    for (int r = 0; r < a.rows; ++r)
        for (int c = 0; c < a.cols; ++c) out.at(r, c) = a.at(r, c);
    for (int r = 0; r < b.rows; ++r)
        for (int c = 0; c < b.cols; ++c) out.at(a.rows + r, c) = b.at(r, c);
    return out;
}

bool all_finite(const Matrix& m) {
    for (double v : m.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace hybridsim
