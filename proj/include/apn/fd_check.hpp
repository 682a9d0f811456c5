// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef APN_FD_CHECK_HPP
#define APN_FD_CHECK_HPP

#include "apn/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace apn
{
    // Central-difference comparison of analytic derivatives.
    //
    // Step per coordinate: h = max(1e-6, 1e-7 |x_i|). Relative error per
    // entry: |a - fd| / max(|a|, |fd|, 1e-12). The callables may run in a
    // wider type than the analytic values (long double is the usual choice),
    // which keeps rounding in the differences far below the tolerances.
    template <typename T>
    using ScalarFn = std::function<T(const RVec<T> &)>;
    template <typename T>
    using VectorFn = std::function<RVec<T>(const RVec<T> &)>;

    inline double fd_step(double x) { return std::max(1e-6, 1e-7 * std::abs(x)); }

    inline double relative_error(double analytic, double numeric)
    {
        const double den = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
        return std::abs(analytic - numeric) / den;
    }

    struct FdGradientReport
    {
        RVecd analytic;
        RVecd numeric;
        RVecd rel_err;
        double max_rel_err = 0.0;

        // Largest relative error over entries [begin, begin + count).
        double max_over(Eigen::Index begin, Eigen::Index count) const
        {
            return count > 0 ? rel_err.segment(begin, count).maxCoeff() : 0.0;
        }
    };

    struct FdHessianReport
    {
        RMatd analytic;
        RMatd numeric;
        RMatd rel_err;
        double max_rel_err = 0.0;

        double max_over(Eigen::Index r, Eigen::Index c, Eigen::Index rows, Eigen::Index cols) const
        {
            return (rows > 0 && cols > 0) ? rel_err.block(r, c, rows, cols).maxCoeff() : 0.0;
        }
    };

    template <typename T>
    RVecd fd_gradient(const ScalarFn<T> &f, const RVecd &x)
    {
        RVecd g(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i)
        {
            const double h = fd_step(x(i));
            RVec<T> xp = x.template cast<T>();
            RVec<T> xm = xp;
            xp(i) += T(h);
            xm(i) -= T(h);
            const T fp = f(xp);
            const T fm = f(xm);
            if (!std::isfinite(double(fp)) || !std::isfinite(double(fm)))
                throw numerical_error("fd_check: non-finite cost value");
            // Divide by the realised step, which may differ from h after rounding.
            g(i) = double((fp - fm) / (xp(i) - xm(i)));
        }
        return g;
    }

    // Column i holds the central difference of the gradient along x_i.
    template <typename T>
    RMatd fd_jacobian(const VectorFn<T> &g, const RVecd &x)
    {
        RMatd J(x.size(), x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i)
        {
            const double h = fd_step(x(i));
            RVec<T> xp = x.template cast<T>();
            RVec<T> xm = xp;
            xp(i) += T(h);
            xm(i) -= T(h);
            const RVec<T> gp = g(xp);
            const RVec<T> gm = g(xm);
            if (!gp.allFinite() || !gm.allFinite())
                throw numerical_error("fd_check: non-finite gradient value");
            J.col(i) = ((gp - gm) / (xp(i) - xm(i))).template cast<double>();
        }
        return J;
    }

    template <typename T>
    FdGradientReport fd_check(const ScalarFn<T> &f, const RVecd &x, const RVecd &analytic)
    {
        if (analytic.size() != x.size())
            throw dimension_error("fd_check: gradient size mismatch");
        FdGradientReport r;
        r.analytic = analytic;
        r.numeric = fd_gradient<T>(f, x);
        r.rel_err.resize(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i)
            r.rel_err(i) = relative_error(analytic(i), r.numeric(i));
        r.max_rel_err = x.size() ? r.rel_err.maxCoeff() : 0.0;
        return r;
    }

    // Hessian check by central differences of a gradient routine that has
    // itself been checked against differences of the cost.
    template <typename T>
    FdHessianReport fd_check_hessian(const VectorFn<T> &g, const RVecd &x, const RMatd &analytic)
    {
        if (analytic.rows() != x.size() || analytic.cols() != x.size())
            throw dimension_error("fd_check: Hessian size mismatch");
        FdHessianReport r;
        r.analytic = analytic;
        const RMatd J = fd_jacobian<T>(g, x);
        r.numeric = 0.5 * (J + J.transpose());
        r.rel_err.resize(x.size(), x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i)
            for (Eigen::Index j = 0; j < x.size(); ++j)
                r.rel_err(i, j) = relative_error(analytic(i, j), r.numeric(i, j));
        r.max_rel_err = x.size() ? r.rel_err.maxCoeff() : 0.0;
        return r;
    }

    // Second differences of the cost itself,
    // [f(x+hi+hj) - f(x+hi-hj) - f(x-hi+hj) + f(x-hi-hj)] / (4 hi hj),
    // with a larger step (h = max(1e-4, 1e-5 |x_i|)) to keep rounding in check.
    template <typename T>
    RMatd fd_second_differences(const ScalarFn<T> &f, const RVecd &x)
    {
        const Eigen::Index n = x.size();
        RMatd H(n, n);
        auto step = [](double v) { return std::max(1e-4, 1e-5 * std::abs(v)); };
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i; j < n; ++j)
            {
                const T hi = T(step(x(i)));
                const T hj = T(step(x(j)));
                auto at = [&](T si, T sj) {
                    RVec<T> y = x.template cast<T>();
                    y(i) += si;
                    y(j) += sj;
                    const T v = f(y);
                    if (!std::isfinite(double(v)))
                        throw numerical_error("fd_check: non-finite cost value");
                    return v;
                };
                const T v = (at(hi, hj) - at(hi, -hj) - at(-hi, hj) + at(-hi, -hj)) / (T(4) * hi * hj);
                H(i, j) = H(j, i) = double(v);
            }
        return H;
    }
} // namespace apn

#endif // APN_FD_CHECK_HPP
