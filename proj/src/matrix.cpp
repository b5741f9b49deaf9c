#include "gradclust/matrix.hpp"

#include <cmath>
#include <cstdint>
#include <string>

namespace gradclust {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        require(r.size() == cols_, "Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

bool Matrix::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions disagree (" +
                                      std::to_string(a.cols()) + " vs " +
                                      std::to_string(b.rows()) + ")");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ar = a.data() + i * a.cols();
        double* cr = c.data() + i * c.cols();
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += ar[k] * b(k, j);
            cr[j] = acc;
        }
    }
    if (!c.all_finite()) throw NumericError("matmul: non-finite entries in product");
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

double frobenius_norm2(const Matrix& m) { return norm2({m.data(), m.size()}); }

double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm2(std::span<const double> a) {
    double acc = 0.0;
    for (double x : a) acc += x * x;
    return acc;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    require(x.size() == y.size(), "axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(std::span<double> x, double alpha) {
    for (double& v : x) v *= alpha;
}

bool all_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

// w = m^T (m v) or m (m^T v) without forming the Gram matrix.
void gram_apply(const Matrix& m, bool gram_on_cols, const std::vector<double>& v,
                std::vector<double>& tmp, std::vector<double>& w) {
    if (gram_on_cols) {
        // tmp = m v (rows), w = m^T tmp (cols)
        for (std::size_t i = 0; i < m.rows(); ++i) tmp[i] = dot(m.row(i), v);
        for (std::size_t j = 0; j < m.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m.rows(); ++i) acc += m(i, j) * tmp[i];
            w[j] = acc;
        }
    } else {
        // tmp = m^T v (cols), w = m tmp (rows)
        for (std::size_t j = 0; j < m.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m.rows(); ++i) acc += m(i, j) * v[i];
            tmp[j] = acc;
        }
        for (std::size_t i = 0; i < m.rows(); ++i) w[i] = dot(m.row(i), tmp);
    }
}

// Fixed pseudo-random direction; any fixed vector risks being orthogonal to
// the leading singular space, so a mixed one plus basis-vector restarts below.
std::vector<double> start_vector(std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t h = 0x9e3779b97f4a7c15ull * (i + 1);
        h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
        h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
        h ^= h >> 31;
        v[i] = 0.5 + static_cast<double>(h >> 11) * 0x1.0p-53;
    }
    double n2 = std::sqrt(norm2(v));
    scale(v, 1.0 / n2);
    return v;
}

}  // namespace

SingularPair top_singular_pair(const Matrix& m, int max_iters, double tol) {
    require(m.rows() > 0 && m.cols() > 0, "top_singular_pair: empty matrix");
    require(max_iters >= 1, "top_singular_pair: max_iters must be positive");
    if (!m.all_finite()) throw NumericError("top_singular_pair: non-finite input");

    SingularPair out;
    const double scale_ref = std::sqrt(frobenius_norm2(m));
    if (scale_ref == 0.0) {
        out.u.assign(m.rows(), 0.0);
        out.v.assign(m.cols(), 0.0);
        out.u[0] = 1.0;
        out.v[0] = 1.0;
        out.converged = true;
        return out;
    }

    const bool gram_on_cols = m.cols() <= m.rows();
    const std::size_t n = gram_on_cols ? m.cols() : m.rows();
    std::vector<double> v = start_vector(n);
    std::vector<double> w(n), tmp(std::max(m.rows(), m.cols()));

    std::size_t restart = 0;
    for (int it = 0; it < max_iters; ++it) {
        out.iterations = it + 1;
        gram_apply(m, gram_on_cols, v, tmp, w);
        double wn = std::sqrt(norm2(w));
        if (wn <= 1e-300 * scale_ref * scale_ref) {
            // v fell into the null space; restart from the next basis vector.
            if (restart >= n) break;
            std::fill(v.begin(), v.end(), 0.0);
            v[restart++] = 1.0;
            continue;
        }
        double drift = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double nv = w[i] / wn;
            drift += (nv - v[i]) * (nv - v[i]);
            v[i] = nv;
        }
        if (std::sqrt(drift) <= tol) {
            out.converged = true;
            break;
        }
    }

    // Recover the full triple from the Gram eigenvector.
    std::vector<double> other(gram_on_cols ? m.rows() : m.cols(), 0.0);
    if (gram_on_cols) {
        for (std::size_t i = 0; i < m.rows(); ++i) other[i] = dot(m.row(i), v);
    } else {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m.rows(); ++i) acc += m(i, j) * v[i];
            other[j] = acc;
        }
    }
    double s = std::sqrt(norm2(other));
    if (s > 0.0) scale(other, 1.0 / s);
    else other[0] = 1.0;

    out.s = s;
    if (gram_on_cols) {
        out.u = std::move(other);
        out.v = std::move(v);
    } else {
        out.u = std::move(v);
        out.v = std::move(other);
    }

    // Sign convention: largest-magnitude entry of u is non-negative.
    std::size_t imax = 0;
    for (std::size_t i = 1; i < out.u.size(); ++i)
        if (std::abs(out.u[i]) > std::abs(out.u[imax])) imax = i;
    if (out.u[imax] < 0.0) {
        scale(out.u, -1.0);
        scale(out.v, -1.0);
    }
    return out;
}

}  // namespace gradclust
