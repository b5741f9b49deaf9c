#ifndef GRADCLUST_MATRIX_HPP
#define GRADCLUST_MATRIX_HPP

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "gradclust/errors.hpp"

namespace gradclust {

// Dense row-major matrix of doubles. Deliberately small surface: everything the
// estimators and the clustering need is a handful of products and norms, and
// keeping the loops in one place is what makes reruns byte-identical.
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    // Rows are contiguous; most inner loops work on row spans.
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    bool all_finite() const;

private:
    std::size_t rows_, cols_;
    std::vector<double> data_;
};

// C = A * B with a fixed i-j-k loop order; the k accumulation runs in ascending
// index order so the same inputs always produce the same bits.
// Throws ContractError on inner-dimension mismatch, NumericError if the result
// contains non-finite entries.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);
Matrix identity(std::size_t n);

double frobenius_norm2(const Matrix& m);

// Small vector helpers shared across modules. All reductions run left to right.
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);  // squared Euclidean norm
void axpy(double alpha, std::span<const double> x, std::span<double> y);  // y += alpha*x
void scale(std::span<double> x, double alpha);
bool all_finite(std::span<const double> x);

struct SingularPair {
    std::vector<double> u;  // left vector, unit norm
    std::vector<double> v;  // right vector, unit norm
    double s = 0.0;         // leading singular value, >= 0
    bool converged = false;
    int iterations = 0;
};

// Leading singular triple of m by power iteration on the smaller Gram matrix
// (m^T m or m m^T, never materialized; each step is two matrix-vector products).
// On non-convergence the best iterate is returned with converged = false.
SingularPair top_singular_pair(const Matrix& m, int max_iters = 1000, double tol = 1e-13);

}  // namespace gradclust

#endif
