#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "gradclust/matrix.hpp"
#include "gradclust/rng.hpp"

using namespace gradclust;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
    return e;
}

}  // namespace

TEST_CASE("matmul matches hand-computed products") {
    Matrix a{{1, 2}, {3, 4}};
    Matrix b{{5}, {6}};
    Matrix c = matmul(a, b);
    REQUIRE(c.rows() == 2);
    REQUIRE(c.cols() == 1);
    CHECK(c(0, 0) == 17.0);
    CHECK(c(1, 0) == 39.0);
}

TEST_CASE("matmul identity and zero behave") {
    RngStream rng(7, 0);
    Matrix m = random_matrix(4, 3, rng);
    Matrix im = matmul(identity(4), m);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) CHECK(im(i, j) == m(i, j));

    Matrix z(3, 5);
    Matrix mz = matmul(m, z);
    for (double x : mz.values()) CHECK(x == 0.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Matrix a(2, 3), b(4, 2);
    CHECK_THROWS_AS(matmul(a, b), ContractError);
}

TEST_CASE("matmul is associative on small integer matrices") {
    RngStream rng(11, 1);
    for (int trial = 0; trial < 20; ++trial) {
        auto randint = [&](std::size_t r, std::size_t c) {
            Matrix m(r, c);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    m(i, j) = static_cast<double>(rng.uniform_index(19)) - 9.0;
            return m;
        };
        Matrix a = randint(3, 4), b = randint(4, 2), c = randint(2, 5);
        Matrix left = matmul(matmul(a, b), c);
        Matrix right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i)
            CHECK(left.values()[i] == right.values()[i]);
    }
}

TEST_CASE("matmul reruns are byte-identical") {
    RngStream rng(3, 9);
    Matrix a = random_matrix(6, 7, rng), b = random_matrix(7, 5, rng);
    Matrix c1 = matmul(a, b), c2 = matmul(a, b);
    CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(double)) == 0);
}

TEST_CASE("top_singular_pair recovers a planted rank-1 matrix") {
    // m = 2 * u v^T with unit u, v.
    std::vector<double> u{0.6, 0.8}, v{1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0)};
    Matrix m(2, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) m(i, j) = 2.0 * u[i] * v[j];
    auto p = top_singular_pair(m);
    CHECK(p.converged);
    CHECK(p.s == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::abs(dot(p.u, u)) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::abs(dot(p.v, v)) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("top_singular_pair on diag(3,1)") {
    Matrix m{{3, 0}, {0, 1}};
    auto p = top_singular_pair(m);
    CHECK(p.converged);
    CHECK(p.s == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(std::abs(p.u[0]) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(std::abs(p.v[0]) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("top_singular_pair matches a dense SVD oracle") {
    RngStream rng(42, 5);
    Matrix m = random_matrix(5, 4, rng);
    auto p = top_singular_pair(m, 5000, 1e-15);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
    CHECK(std::abs(p.s - svd.singularValues()(0)) < 1e-8);
}

TEST_CASE("rank-1 reconstruction error is optimal against the SVD oracle") {
    RngStream rng(2024, 0);
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t r = 2 + rng.uniform_index(7), c = 2 + rng.uniform_index(7);
        Matrix m = random_matrix(r, c, rng);
        auto p = top_singular_pair(m, 5000, 1e-15);
        REQUIRE(p.converged);

        double err2 = 0.0;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                double d = m(i, j) - p.s * p.u[i] * p.v[j];
                err2 += d * d;
            }

        Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
        double best2 = 0.0;  // sum of squared trailing singular values
        for (int k = 1; k < svd.singularValues().size(); ++k)
            best2 += svd.singularValues()(k) * svd.singularValues()(k);
        CHECK(std::sqrt(err2) <= std::sqrt(best2) + 1e-8);
    }
}

TEST_CASE("top_singular_pair handles the zero matrix and flags non-convergence") {
    Matrix z(3, 4);
    auto p = top_singular_pair(z);
    CHECK(p.converged);
    CHECK(p.s == 0.0);
    CHECK(norm2(p.u) == doctest::Approx(1.0));

    RngStream rng(8, 8);
    Matrix m = random_matrix(6, 5, rng);
    auto q = top_singular_pair(m, 1, 1e-16);
    CHECK_FALSE(q.converged);
    CHECK(q.s > 0.0);  // best iterate still reported
}

TEST_CASE("top_singular_pair survives a start vector in the null space") {
    // Row space is spanned by (1, -1); the all-ones direction maps to zero.
    Matrix m{{1, -1}};
    auto p = top_singular_pair(m);
    CHECK(p.converged);
    CHECK(p.s == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("normal_sample moments over one million draws") {
    RngStream rng(123, 456);
    auto xs = normal_sample(rng, 1000000);
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size() - 1);
    CHECK(std::abs(mean) < 0.01);
    CHECK(var > 0.99);
    CHECK(var < 1.01);
}

TEST_CASE("identical stream ids replay identical sequences") {
    RngStream a(99, 7), b(99, 7);
    for (int i = 0; i < 1000; ++i) CHECK(a.normal() == b.normal());

    RngStream c(99, 8);
    RngStream d(100, 7);
    int equal_c = 0, equal_d = 0;
    RngStream a2(99, 7);
    for (int i = 0; i < 64; ++i) {
        double x = a2.normal();
        if (x == c.normal()) ++equal_c;
        if (x == d.normal()) ++equal_d;
    }
    CHECK(equal_c == 0);
    CHECK(equal_d == 0);
}

TEST_CASE("child streams are stable and distinct") {
    RngStream base = RngStream::named(5, "measure");
    RngStream c1 = base.child(3), c2 = base.child(3), c3 = base.child(4);
    RngStream n1 = base.child("gc"), n2 = base.child("gc");
    CHECK(c1.stream() == c2.stream());
    CHECK(c1.stream() != c3.stream());
    CHECK(n1.stream() == n2.stream());
    CHECK(c1.normal() == c2.normal());
    // Derivation ignores parent draw history.
    base.normal();
    CHECK(base.child(3).stream() == c1.stream());
}

TEST_CASE("uniform_index stays in range and covers the range") {
    RngStream rng(1, 2);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 5000; ++i) {
        std::size_t k = rng.uniform_index(5);
        REQUIRE(k < 5);
        ++counts[k];
    }
    for (int c : counts) CHECK(c > 800);  // ~1000 expected each
}
