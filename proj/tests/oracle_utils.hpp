// Test-side oracles, independent of the library's production quadrature and
// autodiff paths.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

#include "levysbtm/common.hpp"
#include "levysbtm/net.hpp"

namespace oracle {

// Adaptive Gauss-Kronrod (G7, K15) refinement to an absolute tolerance.
inline double gk15(const std::function<double(double)>& f, double a, double b, double& err) {
    static const double xk[8] = {0.0, 0.2077849550078985, 0.4058451513773972, 0.5860872354676911,
                                 0.7415311855993944, 0.8648644233597691, 0.9491079123427585,
                                 0.9914553711208126};
    static const double wk[8] = {0.2094821410847278, 0.2044329400752989, 0.1903505780647854,
                                 0.1690047266392679, 0.1406532597155259, 0.1047900103222502,
                                 0.0630920926299786, 0.0229353220105292};
    static const double wg[4] = {0.4179591836734694, 0.3818300505051189, 0.2797053914892767,
                                 0.1294849661688697};
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double fk = f(mid) * wk[0];
    double fg = f(mid) * wg[0];
    for (int i = 1; i < 8; ++i) {
        double fu = f(mid + half * xk[i]), fl = f(mid - half * xk[i]);
        fk += wk[i] * (fu + fl);
        if (i % 2 == 0) fg += wg[i / 2] * (fu + fl);
    }
    double k = fk * half, g = fg * half;
    err = std::fabs(k - g);
    return k;
}

inline double adaptive_quadrature(const std::function<double(double)>& f, double a, double b,
                                  double tol = 1e-10, int depth = 0) {
    double err = 0.0;
    double whole = gk15(f, a, b, err);
    if (err < tol || depth > 40) return whole;
    double mid = 0.5 * (a + b);
    return adaptive_quadrature(f, a, mid, tol * 0.5, depth + 1) +
           adaptive_quadrature(f, mid, b, tol * 0.5, depth + 1);
}

inline double gauss_pdf(double x, double mean, double std) {
    double z = (x - mean) / std;
    return std::exp(-0.5 * z * z) / (std * 2.5066282746310005024);
}

// Central-difference divergence of a network score field.
inline double fd_divergence(const levysbtm::ScoreNetwork& net, levysbtm::Vec x, double h = 1e-4) {
    double acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        x[j] += h;
        double up = levysbtm::forward(net, x)[j];
        x[j] -= 2.0 * h;
        double dn = levysbtm::forward(net, x)[j];
        x[j] += h;
        acc += (up - dn) / (2.0 * h);
    }
    return acc;
}

} // namespace oracle
