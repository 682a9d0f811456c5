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

#ifndef APN_DERIVATIVES_HPP
#define APN_DERIVATIVES_HPP

#include "apn/ml_core.hpp"
#include "apn/types.hpp"

namespace apn
{
    // Which concentrated cost: deterministic L_D, the log-determinant term
    // L_C, or stochastic L_S = L_D + L_C.
    enum class CostKind
    {
        D,
        C,
        S
    };

    // Re{A o B} computed as Re{A} o Re{B} - Im{A} o Im{B}.
    template <typename T>
    RMat<T> re_hadamard(const CMat<T> &A, const CMat<T> &B)
    {
        return (A.real().array() * B.real().array() - A.imag().array() * B.imag().array()).matrix();
    }

    // diag{A B} as the row sums of A o B^T.
    template <typename T>
    CVec<T> diag_product(const CMat<T> &A, const CMat<T> &B)
    {
        return (A.array() * B.transpose().array()).rowwise().sum().matrix();
    }

    // Re{diag{A B}}.
    template <typename T>
    RVec<T> re_diag_product(const CMat<T> &A, const CMat<T> &B)
    {
        return re_hadamard<T>(A, B.transpose()).rowwise().sum();
    }

    template <typename T>
    struct GradientBlocks
    {
        RVec<T> g_Dtheta;
        RVec<T> g_Dlambda;
        RVec<T> g_Ctheta; // empty when only L_D was requested
        RVec<T> g_Clambda;

        RVec<T> assembled(CostKind which) const
        {
            const Eigen::Index K = g_Dtheta.size();
            const Eigen::Index M = g_Dlambda.size();
            RVec<T> out(K + M);
            switch (which)
            {
            case CostKind::D:
                out << g_Dtheta, g_Dlambda;
                break;
            case CostKind::C:
                out << g_Ctheta, g_Clambda;
                break;
            case CostKind::S:
                out << (g_Dtheta + g_Ctheta), (g_Dlambda + g_Clambda);
                break;
            }
            return out;
        }
    };

    template <typename T>
    struct HessianBlocks
    {
        RMat<T> H_Dtt, H_Dtl, H_Dll;
        RMat<T> H_Ctt, H_Ctl, H_Cll; // empty when only L_D was requested

        static RMat<T> stack(const RMat<T> &tt, const RMat<T> &tl, const RMat<T> &ll)
        {
            const Eigen::Index K = tt.rows();
            const Eigen::Index M = ll.rows();
            RMat<T> out(K + M, K + M);
            out.topLeftCorner(K, K) = tt;
            out.topRightCorner(K, M) = tl;
            out.bottomLeftCorner(M, K) = tl.transpose();
            out.bottomRightCorner(M, M) = ll;
            return out;
        }

        RMat<T> assembled(CostKind which) const
        {
            switch (which)
            {
            case CostKind::D:
                return stack(H_Dtt, H_Dtl, H_Dll);
            case CostKind::C:
                return stack(H_Ctt, H_Ctl, H_Cll);
            case CostKind::S:
            default:
                return stack(H_Dtt + H_Ctt, H_Dtl + H_Ctl, H_Dll + H_Cll);
            }
        }
    };

    namespace detail
    {
        // Products reused across gradient and Hessian blocks.
        template <typename T>
        struct DerivativeTerms
        {
            CMat<T> IPD;   // (I - P) D
            CMat<T> PR;    // Phi^+ R_zl
            CMat<T> PRIP;  // Phi^+ R_zl (I - P)
            CMat<T> W;     // (I - P) R_zl (I - P)
            CMat<T> MPR;   // M_zl Phi^H R_zl          (C terms only)
            CMat<T> RPz;   // R_zl P_z                 (C terms only)

            DerivativeTerms(const WhitenedWorkspace<T> &w, bool with_c, FlopCounter *fc)
            {
                const Eigen::Index M = w.sensors();
                const Eigen::Index K = w.sources();
                IPD = w.complement(w.D);
                PR = w.pinv * w.R_zl;
                PRIP = PR - (PR * w.Q) * w.Q.adjoint();
                const CMat<T> IPR = w.complement(w.R_zl);
                W = IPR - (IPR * w.Q) * w.Q.adjoint();
                count_cmatmul(fc, K, M, K * 2);
                count_cmatmul(fc, K, M, M);
                count_cmatmul(fc, K, M, K * 2);
                count_cmatmul(fc, M, M, K * 4);
                if (with_c)
                {
                    w.require_c();
                    MPR = w.M_zl * (w.Phi.adjoint() * w.R_zl);
                    RPz = w.R_zl * w.P_z;
                    count_cmatmul(fc, K, M, M);
                    count_cmatmul(fc, K, K, M);
                    count_cmatmul(fc, M, M, M);
                }
            }
        };
    } // namespace detail

    // Gradient of the uniform-noise cost L_Do: 2N Re{diag{Phi_o^+ R_z (I - P_o) D_o}}.
    template <typename T>
    RVec<T> grad_dml_uniform(const WhitenedWorkspace<T> &w, FlopCounter *fc = nullptr)
    {
        if (!w.uniform_noise())
            throw domain_error("grad_dml_uniform: workspace must be built with lambda = 1");
        const CMat<T> IPD = w.complement(w.D);
        const CMat<T> PR = w.pinv * w.R_zl;
        detail::count_cmatmul(fc, w.sensors(), w.sources(), w.sources() * 2);
        detail::count_cmatmul(fc, w.sources(), w.sensors(), w.sensors());
        return T(2 * w.N) * re_diag_product<T>(PR, IPD);
    }

    // Hessian of L_Do. exact = false keeps only the
    // -(Phi^+ R_z Phi^{+H}) o (D^H (I - P) D)^T summand.
    template <typename T>
    RMat<T> hess_dml_uniform(const WhitenedWorkspace<T> &w, bool exact, FlopCounter *fc = nullptr)
    {
        if (!w.uniform_noise())
            throw domain_error("hess_dml_uniform: workspace must be built with lambda = 1");
        const Eigen::Index K = w.sources();
        const T two_n = T(2 * w.N);
        const CMat<T> IPD = w.complement(w.D);
        const CMat<T> Wd = w.D.adjoint() * IPD;
        const CMat<T> PR = w.pinv * w.R_zl;
        const CMat<T> Y = PR * w.pinv.adjoint();
        detail::count_cmatmul(fc, w.sensors(), K, K * 3);
        detail::count_cmatmul(fc, K, w.sensors(), w.sensors() + K);
        if (!exact)
            return -two_n * re_hadamard<T>(Y, Wd.transpose());

        const CMat<T> X = IPD.adjoint() * w.R_zl * IPD;
        const CMat<T> B = w.pinv * w.D;
        const CMat<T> Cm = PR * IPD;
        const CVec<T> e = diag_product<T>(PR, w.complement(w.D2));
        detail::count_cmatmul(fc, K, w.sensors(), w.sensors() + 3 * K);
        RMat<T> H = re_hadamard<T>(w.Minv, X.transpose()) - re_hadamard<T>(B, Cm.transpose()) -
                    re_hadamard<T>(Cm, B.transpose()) - re_hadamard<T>(Y, Wd.transpose());
        H.diagonal() += e.real();
        return two_n * H;
    }

    template <typename T>
    GradientBlocks<T> gradient_blocks(const WhitenedWorkspace<T> &w, CostKind which, FlopCounter *fc = nullptr)
    {
        const bool with_c = which != CostKind::D;
        const detail::DerivativeTerms<T> t(w, with_c, fc);
        const T two_n = T(2 * w.N);
        const RVec<T> inv_lambda = w.lambda.cwiseInverse();

        GradientBlocks<T> g;
        g.g_Dtheta = two_n * re_diag_product<T>(t.PR, t.IPD);
        g.g_Dlambda = two_n * inv_lambda.cwiseProduct(RVec<T>::Ones(w.sensors()) - t.W.diagonal().real());
        if (with_c)
        {
            g.g_Ctheta = -two_n * re_diag_product<T>(t.MPR, t.IPD);
            g.g_Clambda = two_n * inv_lambda.cwiseProduct((w.P.diagonal() - T(2) * t.RPz.diagonal()).real());
        }
        return g;
    }

    // Assembled (K + M)-vector [g_theta; g_lambda] of the requested cost.
    template <typename T>
    RVec<T> gradient(const WhitenedWorkspace<T> &w, CostKind which, FlopCounter *fc = nullptr)
    {
        return gradient_blocks(w, which, fc).assembled(which);
    }

    // Hessian blocks. With reduced = true only the summands that survive near
    // the optimum are evaluated (H_Dtt 1, H_Dtl 0, H_Dll 1, H_Ctt 1, H_Ctl 1,
    // H_Cll 2); the retained H_Dll summand uses (I - P) R_zl (I - P) -> I - P.
    template <typename T>
    HessianBlocks<T> hessian_blocks(const WhitenedWorkspace<T> &w, CostKind which, bool reduced,
                                    FlopCounter *fc = nullptr)
    {
        const bool with_c = which != CostKind::D;
        const detail::DerivativeTerms<T> t(w, with_c, fc);
        const Eigen::Index M = w.sensors();
        const Eigen::Index K = w.sources();
        const T two_n = T(2 * w.N);
        const T four_n = T(4 * w.N);
        const RVec<T> il = w.lambda.cwiseInverse();
        const CMat<T> IM = CMat<T>::Identity(M, M);
        const CMat<T> IP = IM - w.P;

        const CMat<T> Wd = w.D.adjoint() * t.IPD;       // D^H (I - P) D
        const CMat<T> Y = t.PR * w.pinv.adjoint();      // Phi^+ R_zl Phi^{+H}
        detail::count_cmatmul(fc, K, M, 2 * K);

        HessianBlocks<T> h;
        if (reduced)
        {
            h.H_Dtt = -two_n * re_hadamard<T>(Y, Wd.transpose());
            h.H_Dtl = RMat<T>::Zero(K, M);
            RMat<T> dll = re_hadamard<T>(T(4) * w.P - IM, IP.transpose());
            dll.diagonal().array() -= T(1);
            h.H_Dll = two_n * (il.asDiagonal() * dll * il.asDiagonal());
        }
        else
        {
            const CMat<T> X = t.IPD.adjoint() * w.R_zl * t.IPD; // D^H (I-P) R_zl (I-P) D
            const CMat<T> B = w.pinv * w.D;                     // Phi^+ D
            const CMat<T> Cm = t.PR * t.IPD;                    // Phi^+ R_zl (I-P) D
            const CVec<T> e = diag_product<T>(t.PRIP, w.D2);    // diag{Phi^+ R_zl (I-P) D2}
            detail::count_cmatmul(fc, K, M, M + 4 * K);

            RMat<T> tt = re_hadamard<T>(w.Minv, X.transpose()) - re_hadamard<T>(B, Cm.transpose()) -
                         re_hadamard<T>(Cm, B.transpose()) - re_hadamard<T>(Y, Wd.transpose());
            tt.diagonal() += e.real();
            h.H_Dtt = two_n * tt;

            const CMat<T> DW = t.IPD.adjoint() * t.W;           // D^H (I-P) R_zl (I-P)
            RMat<T> tl = re_hadamard<T>(t.PRIP, t.IPD.transpose()) + re_hadamard<T>(DW, w.pinv.conjugate());
            h.H_Dtl = four_n * tl * il.asDiagonal();

            RMat<T> dll = re_hadamard<T>(T(4) * w.P - IM, t.W.transpose());
            dll.diagonal().array() -= T(1);
            h.H_Dll = two_n * (il.asDiagonal() * dll * il.asDiagonal());
            detail::count_cmatmul(fc, K, M, M);
        }

        if (!with_c)
            return h;

        const CMat<T> IRPz = IM - t.RPz;                        // I - R_zl P_z
        const CMat<T> IPDh = t.IPD.adjoint();                   // D^H (I - P)
        if (reduced)
        {
            h.H_Ctt = two_n * re_hadamard<T>(w.Minv, Wd.transpose());
            h.H_Ctl = four_n * re_hadamard<T>(IPDh, w.pinv.conjugate()) * il.asDiagonal();
            RMat<T> cll = re_hadamard<T>(IM - T(2) * w.P, w.P.transpose()) -
                          T(2) * re_hadamard<T>(t.RPz, (IM - T(2) * t.RPz).transpose());
            h.H_Cll = two_n * (il.asDiagonal() * cll * il.asDiagonal());
            return h;
        }

        const CMat<T> B = w.pinv * w.D;
        const CMat<T> MPRIPD = t.MPR * t.IPD;                   // M_zl Phi^H R_zl (I-P) D
        const CMat<T> MPRD = t.MPR * w.D;                       // M_zl Phi^H R_zl D
        const CVec<T> e = diag_product<T>(t.MPR, w.complement(w.D2));
        const CMat<T> S4 = (w.D.adjoint() * IRPz) * w.R_zl * t.IPD;
        detail::count_cmatmul(fc, K, M, 4 * K + 2 * M);

        RMat<T> ctt = re_hadamard<T>(MPRIPD, B.transpose()) + re_hadamard<T>(w.Minv, Wd.transpose()) -
                      re_hadamard<T>(w.M_zl, S4.transpose()) + re_hadamard<T>(MPRD, MPRIPD.transpose());
        ctt.diagonal() -= e.real();
        h.H_Ctt = two_n * ctt;

        // The three rows of the theta-lambda block combine as
        // first - second - third (resolved against finite differences).
        const CMat<T> MPh = w.M_zl * w.Phi.adjoint();           // M_zl Phi^H
        const CMat<T> RIPzR = w.R_zl - t.RPz * w.R_zl;           // R_zl (I - P_z R_zl)
        const CMat<T> DIRPz = w.D.adjoint() * IRPz;              // D^H (I - R_zl P_z)
        const CMat<T> RPhM = w.R_zl * w.Phi * w.M_zl;            // R_zl Phi M_zl
        RMat<T> ctl = re_hadamard<T>(IPDh, w.pinv.conjugate()) -
                      re_hadamard<T>(MPh, (RIPzR * w.D).transpose()) -
                      re_hadamard<T>(DIRPz, RPhM.transpose());
        h.H_Ctl = four_n * ctl * il.asDiagonal();
        detail::count_cmatmul(fc, M, M, 2 * M + 2 * K);

        RMat<T> cll = re_hadamard<T>(IM - T(2) * w.P, w.P.transpose()) -
                      T(4) * re_hadamard<T>(RIPzR, w.P_z.transpose()) -
                      T(2) * re_hadamard<T>(t.RPz, (IM - T(2) * t.RPz).transpose());
        h.H_Cll = two_n * (il.asDiagonal() * cll * il.asDiagonal());
        return h;
    }

    template <typename T>
    RMat<T> hessian(const WhitenedWorkspace<T> &w, CostKind which, bool reduced, FlopCounter *fc = nullptr)
    {
        return hessian_blocks(w, which, reduced, fc).assembled(which);
    }

    // Cost of the requested kind; C is the log-determinant term alone.
    template <typename T>
    T cost(const WhitenedWorkspace<T> &w, CostKind which)
    {
        switch (which)
        {
        case CostKind::D:
            return cost_dml(w);
        case CostKind::C:
            return cost_c(w);
        case CostKind::S:
        default:
            return cost_sml(w);
        }
    }
} // namespace apn

#endif // APN_DERIVATIVES_HPP
