#pragma once

#include "trinoid/core.hpp"
#include "trinoid/loops.hpp"

#include <Eigen/SVD>
#include <random>

namespace testing_util {

using namespace trinoid;

inline Mat2 random_mat(std::mt19937& g, double scale = 1.0)
{
    std::normal_distribution<double> d(0.0, 1.0);
    Mat2 m;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) m(i, j) = scale * cplx(d(g), d(g));
    return m;
}

// coefficients decaying like q^|k|
inline LaurentLoop random_loop(std::mt19937& g, int K, int n, double q = 0.5)
{
    std::vector<Mat2> c(static_cast<std::size_t>(2 * K + 1));
    for (int k = -K; k <= K; ++k) c[static_cast<std::size_t>(k + K)] = random_mat(g, std::pow(q, std::abs(k)));
    return LaurentLoop::from_coeffs(std::move(c), n);
}

inline double condition_on_circle(const LaurentLoop& X, int refine = 4)
{
    double c = 0.0;
    const int m = refine * X.nsamples();
    for (int j = 0; j < m; ++j) {
        Eigen::JacobiSVD<Mat2> svd(eval(X, std::polar(1.0, 2.0 * pi * j / m)));
        c = std::max(c, svd.singularValues()(0) / svd.singularValues()(1));
    }
    return c;
}

// random_loop plus shift * I, redrawn until the condition number on the circle is at most maxcond
inline LaurentLoop invertible_loop(std::mt19937& g, int K, int n, double q, double shift, double maxcond = 20.0)
{
    for (;;) {
        auto X = random_loop(g, K, n, q);
        std::vector<Mat2> c(X.coeffs());
        c[static_cast<std::size_t>(K)] += shift * Mat2::Identity();
        X = LaurentLoop::from_coeffs(std::move(c), n);
        if (condition_on_circle(X) <= maxcond) return X;
    }
}

inline LaurentLoop single(const Mat2& m, int k, int K, int n)
{
    std::vector<Mat2> c(static_cast<std::size_t>(2 * K + 1), Mat2::Zero());
    c[static_cast<std::size_t>(k + K)] = m;
    return LaurentLoop::from_coeffs(std::move(c), n);
}

inline Mat2 E(int i, int j)
{
    Mat2 m = Mat2::Zero();
    m(i, j) = 1.0;
    return m;
}

}  // namespace testing_util
