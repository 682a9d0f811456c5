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

#ifndef APN_ML_CORE_HPP
#define APN_ML_CORE_HPP

#include "apn/array_model.hpp"
#include "apn/types.hpp"

#include <cmath>

namespace apn
{
    // R_z = (1/N) Z Z^H together with its snapshot count.
    template <typename T = double>
    struct SampleCovariance
    {
        CMat<T> Rz;
        Eigen::Index N = 0;

        static SampleCovariance from_snapshots(const CMatd &Z)
        {
            if (Z.cols() < 1)
                throw dimension_error("sample covariance: no snapshots");
            CMatd R = Z * Z.adjoint() / double(Z.cols());
            R = (0.5 * (R + R.adjoint())).eval();
            return {R.template cast<Complex<T>>(), Z.cols()};
        }

        // Accepts an externally supplied covariance; checks Hermitian symmetry
        // and positive semidefiniteness at the documented tolerances.
        static SampleCovariance from_matrix(const CMat<T> &R, Eigen::Index N)
        {
            if (R.rows() != R.cols() || R.rows() < 1)
                throw dimension_error("sample covariance must be square");
            if (N < 1)
                throw dimension_error("sample covariance: snapshot count must be positive");
            const double scale = std::max(1.0, double(R.cwiseAbs().maxCoeff()));
            if (double((R - R.adjoint()).cwiseAbs().maxCoeff()) > 1e-12 * scale)
                throw domain_error("sample covariance is not Hermitian");
            CMat<T> H = (T(0.5) * (R + R.adjoint())).eval();
            Eigen::SelfAdjointEigenSolver<CMat<T>> es(H, Eigen::EigenvaluesOnly);
            if (double(es.eigenvalues().minCoeff()) < -1e-10 * scale)
                throw domain_error("sample covariance is not positive semidefinite");
            return {H, N};
        }

        template <typename U>
        SampleCovariance<U> cast() const
        {
            return {Rz.template cast<Complex<U>>(), N};
        }
    };

    // Everything derived from (theta, lambda, R_z) that the costs, gradients
    // and Hessians share. Built once per evaluation point, then read-only.
    //
    // Phi = Lambda Phi_o is factored as Phi = Q Rfac (thin QR). With
    // Rinv = Rfac^{-1}:
    //   Minv = (Phi^H Phi)^{-1} = Rinv Rinv^H,  pinv = Phi^+ = Rinv Q^H,
    //   P = Q Q^H,  M_zl = Rinv (Q^H R_zl Q)^{-1} Rinv^H,
    //   P_z = Q (Q^H R_zl Q)^{-1} Q^H,  |C| = |Q^H R_zl Q|.
    template <typename T = double>
    struct WhitenedWorkspace
    {
        RVec<T> theta;
        RVec<T> lambda;
        Eigen::Index N = 0;

        CMat<T> Phi;
        CMat<T> D;
        CMat<T> D2;
        CMat<T> Q;
        CMat<T> Rfac;
        CMat<T> Rinv;
        CMat<T> Minv;
        CMat<T> pinv;
        CMat<T> P;
        CMat<T> R_zl;

        // Q^H R_zl Q and the quantities that need it to be positive definite.
        CMat<T> QRQ;
        bool c_positive_definite = false;
        CMat<T> QRQ_inv;
        CMat<T> M_zl;
        CMat<T> P_z;
        T logdetC = T(0);

        Eigen::Index sensors() const { return Phi.rows(); }
        Eigen::Index sources() const { return Phi.cols(); }

        bool uniform_noise() const { return (lambda.array() == T(1)).all(); }

        // (I - P) A evaluated as A - Q (Q^H A).
        CMat<T> complement(const CMat<T> &A) const { return A - Q * (Q.adjoint() * A); }

        void require_c() const
        {
            if (!c_positive_definite)
                throw not_positive_definite_error("Q^H R_zl Q is not positive definite");
        }
    };

    inline constexpr double rank_tolerance = 1e-12;

    template <typename T>
    WhitenedWorkspace<T> build_workspace(const SampleCovariance<T> &cov, const SteeringSet<T> &steer,
                                         const RVec<T> &lambda, const RVec<T> &theta,
                                         FlopCounter *fc = nullptr)
    {
        const Eigen::Index M = steer.Phi_o.rows();
        const Eigen::Index K = steer.Phi_o.cols();
        if (cov.Rz.rows() != M || cov.Rz.cols() != M)
            throw dimension_error("build_workspace: covariance size does not match array");
        if (K > M)
            throw rank_deficient_error("build_workspace: more sources than sensors");
        check_noise(lambda, M);

        WhitenedWorkspace<T> w;
        w.theta = theta;
        w.lambda = lambda;
        w.N = cov.N;

        const auto L = lambda.asDiagonal();
        w.Phi = L * steer.Phi_o;
        w.D = L * steer.D_o;
        w.D2 = L * steer.D_o2;
        w.R_zl = L * cov.Rz * L;
        detail::count_elementwise(fc, 3 * M * K + 2 * M * M, 2.0);

        Eigen::HouseholderQR<CMat<T>> qr(w.Phi);
        w.Q = qr.householderQ() * CMat<T>::Identity(M, K);
        w.Rfac = qr.matrixQR().topLeftCorner(K, K).template triangularView<Eigen::Upper>();
        detail::count_cmatmul(fc, M, K, K);

        T dmax = T(0);
        for (Eigen::Index k = 0; k < K; ++k)
            dmax = std::max(dmax, std::abs(w.Rfac(k, k)));
        for (Eigen::Index k = 0; k < K; ++k)
            if (!(std::abs(w.Rfac(k, k)) > T(rank_tolerance) * dmax))
                throw rank_deficient_error("build_workspace: signature matrix is rank deficient (coalesced angles)");

        w.Rinv = w.Rfac.template triangularView<Eigen::Upper>().solve(CMat<T>::Identity(K, K));
        w.Minv = w.Rinv * w.Rinv.adjoint();
        w.pinv = w.Rinv * w.Q.adjoint();
        w.P = w.Q * w.Q.adjoint();
        detail::count_cmatmul(fc, K, K, K);
        detail::count_cmatmul(fc, K, K, M);
        detail::count_cmatmul(fc, M, K, M);

        const CMat<T> RQ = w.R_zl * w.Q;
        w.QRQ = w.Q.adjoint() * RQ;
        w.QRQ = (T(0.5) * (w.QRQ + w.QRQ.adjoint())).eval();
        detail::count_cmatmul(fc, M, M, K);
        detail::count_cmatmul(fc, K, M, K);

        Eigen::LLT<CMat<T>> llt(w.QRQ);
        w.c_positive_definite = llt.info() == Eigen::Success;
        if (w.c_positive_definite)
        {
            const CMat<T> &Lc = llt.matrixL();
            T ld = T(0);
            for (Eigen::Index k = 0; k < K; ++k)
            {
                const T d = Lc(k, k).real();
                if (!(d > T(0)))
                {
                    w.c_positive_definite = false;
                    break;
                }
                ld += T(2) * std::log(d);
            }
            if (w.c_positive_definite)
            {
                w.logdetC = ld;
                w.QRQ_inv = llt.solve(CMat<T>::Identity(K, K));
                w.M_zl = w.Rinv * w.QRQ_inv * w.Rinv.adjoint();
                w.P_z = w.Q * w.QRQ_inv * w.Q.adjoint();
                detail::count_cmatmul(fc, K, K, K);
                detail::count_cmatmul(fc, M, K, M);
            }
        }
        return w;
    }

    template <typename T>
    WhitenedWorkspace<T> build_workspace(const SampleCovariance<T> &cov, const ArrayGeometry &geometry,
                                         const RVec<T> &theta, const RVec<T> &lambda,
                                         FlopCounter *fc = nullptr)
    {
        return build_workspace(cov, steering_set<T>(geometry, theta), lambda, theta, fc);
    }

    template <typename T>
    WhitenedWorkspace<T> build_uniform_workspace(const SampleCovariance<T> &cov, const ArrayGeometry &geometry,
                                                 const RVec<T> &theta, FlopCounter *fc = nullptr)
    {
        return build_workspace(cov, geometry, theta, RVec<T>(RVec<T>::Ones(geometry.size())), fc);
    }

    namespace detail
    {
        // tr{(I - P) R_zl} = tr{R_zl} - tr{Q^H R_zl Q}.
        template <typename T>
        T residual_trace(const WhitenedWorkspace<T> &w)
        {
            return w.R_zl.trace().real() - w.QRQ.trace().real();
        }
    } // namespace detail

    // L_Do = -N tr{(I - P_o) R_z}; workspace must have lambda = 1.
    template <typename T>
    T cost_dml_uniform(const WhitenedWorkspace<T> &w)
    {
        if (!w.uniform_noise())
            throw domain_error("cost_dml_uniform: workspace must be built with lambda = 1");
        return -T(w.N) * detail::residual_trace(w);
    }

    template <typename T>
    T log_det_lambda(const RVec<T> &lambda)
    {
        return lambda.array().log().sum();
    }

    // L_D = N (2 log|Lambda| - tr{(I - P) R_zl}).
    template <typename T>
    T cost_dml(const WhitenedWorkspace<T> &w)
    {
        return T(w.N) * (T(2) * log_det_lambda(w.lambda) - detail::residual_trace(w));
    }

    // L_C = -N log|C| with |C| = |Q^H R_zl Q|.
    template <typename T>
    T cost_c(const WhitenedWorkspace<T> &w)
    {
        w.require_c();
        return -T(w.N) * w.logdetC;
    }

    // L_S = L_D + L_C.
    template <typename T>
    T cost_sml(const WhitenedWorkspace<T> &w)
    {
        return cost_dml(w) + cost_c(w);
    }

    // Maximiser of the stochastic likelihood in R_s: Phi^+ R_zl Phi^{+H} - Minv.
    template <typename T>
    CMat<T> concentrated_rs(const WhitenedWorkspace<T> &w)
    {
        CMat<T> out = w.pinv * w.R_zl * w.pinv.adjoint() - w.Minv;
        return (T(0.5) * (out + out.adjoint())).eval();
    }
} // namespace apn

#endif // APN_ML_CORE_HPP
