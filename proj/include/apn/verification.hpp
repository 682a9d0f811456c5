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

#ifndef APN_VERIFICATION_HPP
#define APN_VERIFICATION_HPP

#include "apn/array_model.hpp"
#include "apn/derivatives.hpp"
#include "apn/fd_check.hpp"
#include "apn/ml_core.hpp"
#include "apn/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace apn
{
    // Randomised self-test of the derivative formulas and workspace
    // identities. Used by the `verify` subcommand and the test suites.

    struct InstanceLimits
    {
        Eigen::Index min_sensors = 4;
        Eigen::Index max_sensors = 12;
        Eigen::Index max_sources = 4;
        Eigen::Index max_snapshots = 64;
    };

    struct RandomInstance
    {
        ArrayGeometry geometry;
        RVecd theta;
        RVecd lambda;
        CMatd Z;
        SampleCovariance<double> cov;
    };

    inline Eigen::Index uniform_index(RngStream &rng, Eigen::Index lo, Eigen::Index hi)
    {
        return std::uniform_int_distribution<Eigen::Index>(lo, hi)(rng.engine());
    }

    // K angles in (-1.3, 1.3) rad, pairwise separated by at least `min_sep`.
    inline RVecd random_angles(RngStream &rng, Eigen::Index K, double min_sep)
    {
        RVecd theta(K);
        for (int attempt = 0;; ++attempt)
        {
            for (Eigen::Index k = 0; k < K; ++k)
                theta(k) = rng.uniform(-1.3, 1.3);
            bool ok = true;
            for (Eigen::Index i = 0; i < K && ok; ++i)
                for (Eigen::Index j = 0; j < i && ok; ++j)
                    ok = std::abs(theta(i) - theta(j)) >= min_sep;
            if (ok || attempt > 1000)
                return theta;
        }
    }

    // Random geometry (increasing positions with gaps in [0.5, 1.5]), angles,
    // inverse noise deviations in [0.5, 2], and data Z = G W with random
    // complex Gaussian G (M x M) and W (M x N).
    inline RandomInstance random_instance(RngStream &rng, const InstanceLimits &lim = {})
    {
        const Eigen::Index M = uniform_index(rng, lim.min_sensors, lim.max_sensors);
        const Eigen::Index K = uniform_index(rng, 1, std::min(lim.max_sources, M - 1));
        const Eigen::Index N = uniform_index(rng, K, lim.max_snapshots);

        RVecd pos(M);
        pos(0) = 0.0;
        for (Eigen::Index m = 1; m < M; ++m)
            pos(m) = pos(m - 1) + rng.uniform(0.5, 1.5);
        ArrayGeometry g(pos);

        RandomInstance inst{g, random_angles(rng, K, 0.5 * g.exclusion_radius()), RVecd(M), CMatd(), {}};
        for (Eigen::Index m = 0; m < M; ++m)
            inst.lambda(m) = rng.uniform(0.5, 2.0);
        const CMatd G = rng.complex_normal_matrix(M, M);
        inst.Z = G * rng.complex_normal_matrix(M, N);
        inst.cov = SampleCovariance<double>::from_snapshots(inst.Z);
        return inst;
    }

    // Maximum relative errors (analytic vs central differences) per block.
    struct DerivativeCheck
    {
        double g_Dtheta = 0, g_Dlambda = 0, g_Ctheta = 0, g_Clambda = 0, g_Do = 0;
        double H_Dtt = 0, H_Dtl = 0, H_Dll = 0, H_Ctt = 0, H_Ctl = 0, H_Cll = 0, H_Do = 0;
        double symmetry = 0; // max |H - H^T| over the diagonal blocks, relative to max |H|

        double worst_gradient() const { return std::max({g_Dtheta, g_Dlambda, g_Ctheta, g_Clambda, g_Do}); }
        double worst_hessian() const { return std::max({H_Dtt, H_Dtl, H_Dll, H_Ctt, H_Ctl, H_Cll, H_Do}); }
    };

    namespace detail
    {
        using ld = long double;

        inline ld wide_cost(const RandomInstance &inst, const SampleCovariance<ld> &cov, const RVec<ld> &x,
                            CostKind which)
        {
            const Eigen::Index K = inst.theta.size();
            const Eigen::Index M = inst.lambda.size();
            const auto w = build_workspace<ld>(cov, inst.geometry, x.head(K), x.tail(M));
            return cost(w, which);
        }

        inline RVec<ld> wide_gradient(const RandomInstance &inst, const SampleCovariance<ld> &cov,
                                      const RVec<ld> &x, CostKind which)
        {
            const Eigen::Index K = inst.theta.size();
            const Eigen::Index M = inst.lambda.size();
            const auto w = build_workspace<ld>(cov, inst.geometry, x.head(K), x.tail(M));
            return gradient(w, which);
        }
    } // namespace detail

    inline DerivativeCheck check_derivatives(const RandomInstance &inst)
    {
        using detail::ld;
        const Eigen::Index K = inst.theta.size();
        const Eigen::Index M = inst.lambda.size();
        const auto cov_ld = inst.cov.cast<ld>();
        RVecd x(K + M);
        x << inst.theta, inst.lambda;

        const auto w = build_workspace<double>(inst.cov, inst.geometry, inst.theta, inst.lambda);
        const auto gb = gradient_blocks(w, CostKind::S);
        const auto hb = hessian_blocks(w, CostKind::S, false);

        DerivativeCheck out;
        for (CostKind which : {CostKind::D, CostKind::C})
        {
            const ScalarFn<ld> f = [&](const RVec<ld> &y) { return detail::wide_cost(inst, cov_ld, y, which); };
            const VectorFn<ld> g = [&](const RVec<ld> &y) { return detail::wide_gradient(inst, cov_ld, y, which); };
            const auto gr = fd_check<ld>(f, x, gb.assembled(which));
            const auto hr = fd_check_hessian<ld>(g, x, hb.assembled(which));
            const double ett = hr.max_over(0, 0, K, K);
            const double etl = std::max(hr.max_over(0, K, K, M), hr.max_over(K, 0, M, K));
            const double ell = hr.max_over(K, K, M, M);
            if (which == CostKind::D)
            {
                out.g_Dtheta = gr.max_over(0, K);
                out.g_Dlambda = gr.max_over(K, M);
                out.H_Dtt = ett;
                out.H_Dtl = etl;
                out.H_Dll = ell;
            }
            else
            {
                out.g_Ctheta = gr.max_over(0, K);
                out.g_Clambda = gr.max_over(K, M);
                out.H_Ctt = ett;
                out.H_Ctl = etl;
                out.H_Cll = ell;
            }
        }

        // Uniform-noise cost over theta only.
        {
            const RVec<ld> ones = RVec<ld>::Ones(M);
            const ScalarFn<ld> f = [&](const RVec<ld> &t) {
                return cost_dml_uniform(build_workspace<ld>(cov_ld, inst.geometry, t, ones));
            };
            const VectorFn<ld> g = [&](const RVec<ld> &t) {
                return grad_dml_uniform(build_workspace<ld>(cov_ld, inst.geometry, t, ones));
            };
            const auto wo = build_uniform_workspace<double>(inst.cov, inst.geometry, inst.theta);
            out.g_Do = fd_check<ld>(f, inst.theta, grad_dml_uniform(wo)).max_rel_err;
            out.H_Do = fd_check_hessian<ld>(g, inst.theta, hess_dml_uniform(wo, true)).max_rel_err;
        }

        auto asym = [](const RMatd &H) {
            const double s = std::max(1e-300, H.cwiseAbs().maxCoeff());
            return (H - H.transpose()).cwiseAbs().maxCoeff() / s;
        };
        out.symmetry = std::max({asym(hb.H_Dtt), asym(hb.H_Dll), asym(hb.H_Ctt), asym(hb.H_Cll)});
        return out;
    }

    // Workspace identities and concentration checks.
    struct IdentityCheck
    {
        double p_idempotent = 0;   // max |P^2 - P|
        double p_hermitian = 0;    // max |P - P^H|
        double trace_pz_rzl = 0;   // |tr{P_z R_zl} - K|
        double c_inverse = 0;      // max |(I - P + P_z)(I - P + P R_zl P) - I|
        double dml_concentration = 0;   // |L_D - (L_D(S_hat) + NM log pi)| / max(1, |L_D|)
        double sml_concentration = 0;   // |L_S - (L_S(R_hat) + NM log pi + NK)| / max(1, |L_S|)
        double dml_perturbation_gain = 0; // max over perturbations of L_D(S') - L_D(S_hat), should be <= 0
        double sml_perturbation_gain = 0;
    };

    // Uncompressed deterministic log-likelihood including -NM log pi.
    inline double dml_full_likelihood(const WhitenedWorkspace<double> &w, const CMatd &Z, const CMatd &S)
    {
        const Eigen::Index M = w.sensors();
        const double N = double(Z.cols());
        const CMatd E = w.lambda.asDiagonal() * Z - w.Phi * S;
        return -N * double(M) * std::log(pi_v<double>) + 2.0 * N * log_det_lambda(w.lambda) - E.squaredNorm();
    }

    // Uncompressed stochastic log-likelihood including -NM log pi; +inf
    // guard returns -inf when I + Phi R Phi^H is not positive definite.
    inline double sml_full_likelihood(const WhitenedWorkspace<double> &w, const CMatd &Rs)
    {
        const Eigen::Index M = w.sensors();
        const double N = double(w.N);
        CMatd C = CMatd::Identity(M, M) + w.Phi * Rs * w.Phi.adjoint();
        C = (0.5 * (C + C.adjoint())).eval();
        Eigen::LLT<CMatd> llt(C);
        if (llt.info() != Eigen::Success)
            return -std::numeric_limits<double>::infinity();
        double logdet = 0.0;
        for (Eigen::Index m = 0; m < M; ++m)
        {
            const double d = llt.matrixL()(m, m).real();
            if (!(d > 0.0))
                return -std::numeric_limits<double>::infinity();
            logdet += 2.0 * std::log(d);
        }
        const double tr = llt.solve(w.R_zl).trace().real();
        return -N * double(M) * std::log(pi_v<double>) + 2.0 * N * log_det_lambda(w.lambda) - N * logdet - N * tr;
    }

    inline IdentityCheck check_identities(const RandomInstance &inst, RngStream &rng, int perturbations = 20)
    {
        const auto w = build_workspace<double>(inst.cov, inst.geometry, inst.theta, inst.lambda);
        const Eigen::Index M = w.sensors();
        const Eigen::Index K = w.sources();
        const double N = double(w.N);
        const CMatd I = CMatd::Identity(M, M);

        IdentityCheck out;
        out.p_idempotent = (w.P * w.P - w.P).cwiseAbs().maxCoeff();
        out.p_hermitian = (w.P - w.P.adjoint()).cwiseAbs().maxCoeff();
        w.require_c();
        out.trace_pz_rzl = std::abs((w.P_z * w.R_zl).trace().real() - double(K));
        out.c_inverse = ((I - w.P + w.P_z) * (I - w.P + w.P * w.R_zl * w.P) - I).cwiseAbs().maxCoeff();

        const double log_pi_term = N * double(M) * std::log(pi_v<double>);
        const CMatd S_hat = w.pinv * (w.lambda.asDiagonal() * inst.Z);
        const double ld_hat = dml_full_likelihood(w, inst.Z, S_hat);
        const double cd = cost_dml(w);
        out.dml_concentration = std::abs(cd - (ld_hat + log_pi_term)) / std::max(1.0, std::abs(cd));

        const CMatd Rs_hat = concentrated_rs(w);
        const double ls_hat = sml_full_likelihood(w, Rs_hat);
        const double cs = cost_sml(w);
        out.sml_concentration = std::abs(cs - (ls_hat + log_pi_term + N * double(K))) / std::max(1.0, std::abs(cs));

        out.dml_perturbation_gain = -std::numeric_limits<double>::infinity();
        out.sml_perturbation_gain = -std::numeric_limits<double>::infinity();
        for (int p = 0; p < perturbations; ++p)
        {
            const double scale = 1e-3 * std::pow(10.0, 2.0 * double(p % 3));
            const CMatd dS = rng.complex_normal_matrix(K, inst.Z.cols(), scale * scale);
            out.dml_perturbation_gain =
                std::max(out.dml_perturbation_gain, dml_full_likelihood(w, inst.Z, S_hat + dS) - ld_hat);

            CMatd H = rng.complex_normal_matrix(K, K, scale * scale * Rs_hat.cwiseAbs().maxCoeff());
            H = (0.5 * (H + H.adjoint())).eval();
            const double lp = sml_full_likelihood(w, Rs_hat + H);
            if (std::isfinite(lp))
                out.sml_perturbation_gain = std::max(out.sml_perturbation_gain, lp - ls_hat);
        }
        return out;
    }

    struct VerificationReport
    {
        int instances = 0;
        DerivativeCheck worst;
        IdentityCheck worst_identity;
        std::vector<std::string> failures;

        bool passed() const { return failures.empty(); }
    };

    struct VerificationTolerances
    {
        double gradient = 1e-5;
        double hessian = 1e-4;
        double symmetry = 1e-10;
        double projection = 1e-10;
        double trace = 1e-9;
        double c_inverse = 1e-9;
        double concentration = 1e-8;
        double perturbation_slack = 1e-10;
    };

    inline VerificationReport run_verification(int instances, std::uint64_t seed,
                                               const VerificationTolerances &tol = {},
                                               const InstanceLimits &lim = {})
    {
        VerificationReport rep;
        auto upd = [](double &acc, double v) { acc = std::max(acc, v); };
        rep.worst_identity.dml_perturbation_gain = -std::numeric_limits<double>::infinity();
        rep.worst_identity.sml_perturbation_gain = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < instances; ++i)
        {
            RngStream rng(seed, {std::uint64_t(i)});
            const RandomInstance inst = random_instance(rng, lim);
            const std::string tag = "instance " + std::to_string(i) + " (M=" + std::to_string(inst.lambda.size()) +
                                    ", K=" + std::to_string(inst.theta.size()) +
                                    ", N=" + std::to_string(inst.Z.cols()) + ")";
            try
            {
                const DerivativeCheck d = check_derivatives(inst);
                const IdentityCheck c = check_identities(inst, rng);
                auto &W = rep.worst;
                upd(W.g_Dtheta, d.g_Dtheta), upd(W.g_Dlambda, d.g_Dlambda), upd(W.g_Ctheta, d.g_Ctheta);
                upd(W.g_Clambda, d.g_Clambda), upd(W.g_Do, d.g_Do);
                upd(W.H_Dtt, d.H_Dtt), upd(W.H_Dtl, d.H_Dtl), upd(W.H_Dll, d.H_Dll);
                upd(W.H_Ctt, d.H_Ctt), upd(W.H_Ctl, d.H_Ctl), upd(W.H_Cll, d.H_Cll), upd(W.H_Do, d.H_Do);
                upd(W.symmetry, d.symmetry);
                auto &C = rep.worst_identity;
                upd(C.p_idempotent, c.p_idempotent), upd(C.p_hermitian, c.p_hermitian);
                upd(C.trace_pz_rzl, c.trace_pz_rzl), upd(C.c_inverse, c.c_inverse);
                upd(C.dml_concentration, c.dml_concentration), upd(C.sml_concentration, c.sml_concentration);
                upd(C.dml_perturbation_gain, c.dml_perturbation_gain);
                upd(C.sml_perturbation_gain, c.sml_perturbation_gain);

                if (d.worst_gradient() > tol.gradient)
                    rep.failures.push_back(tag + ": gradient rel. error " + std::to_string(d.worst_gradient()));
                if (d.worst_hessian() > tol.hessian)
                    rep.failures.push_back(tag + ": Hessian rel. error " + std::to_string(d.worst_hessian()));
                if (d.symmetry > tol.symmetry)
                    rep.failures.push_back(tag + ": Hessian asymmetry " + std::to_string(d.symmetry));
                if (c.p_idempotent > tol.projection || c.p_hermitian > tol.projection)
                    rep.failures.push_back(tag + ": projection identities");
                if (c.trace_pz_rzl > tol.trace)
                    rep.failures.push_back(tag + ": tr{P_z R_zl} != K");
                if (c.c_inverse > tol.c_inverse)
                    rep.failures.push_back(tag + ": C C^{-1} != I");
                if (c.dml_concentration > tol.concentration || c.sml_concentration > tol.concentration)
                    rep.failures.push_back(tag + ": concentrated cost differs from uncompressed maximum");
                if (c.dml_perturbation_gain > tol.perturbation_slack ||
                    c.sml_perturbation_gain > tol.perturbation_slack)
                    rep.failures.push_back(tag + ": perturbation increased the uncompressed likelihood");
            }
            catch (const std::exception &e)
            {
                rep.failures.push_back(tag + ": " + e.what());
            }
            ++rep.instances;
        }
        return rep;
    }
} // namespace apn

#endif // APN_VERIFICATION_HPP
