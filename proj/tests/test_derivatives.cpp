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

#include "apn/derivatives.hpp"
#include "apn/fd_check.hpp"
#include "apn/verification.hpp"

#include <gtest/gtest.h>

using namespace apn;

namespace
{
    // Asymptotic instance: R_zl = Phi R_s Phi^H + I at the true parameters,
    // i.e. R_z = Phi_o R_s Phi_o^H + Lambda^-2.
    struct Asymptotic
    {
        ArrayGeometry g = ArrayGeometry::ula(11);
        RVecd theta{{-0.2513, 0.1571, 1.005}};
        RVecd lambda;
        CMatd Rs;
        SampleCovariance<double> cov;

        explicit Asymptotic(double snr = 30.0, Eigen::Index N = 100)
        {
            Rs = CMatd::Zero(3, 3);
            Rs.diagonal() << 1.0, 0.64, 0.25;
            const RVecd trend = linear_trend(11);
            const SourceModel model = StochasticSource{Rs};
            lambda = scale_for_snr(g, theta, model, trend, snr);
            const CMatd Phi_o = steering_set<double>(g, theta).Phi_o;
            CMatd R = Phi_o * Rs * Phi_o.adjoint();
            R.diagonal() += lambda.cwiseAbs2().cwiseInverse().cast<Complex<double>>();
            cov = SampleCovariance<double>::from_matrix(R, N);
        }
    };

    double rel_norm(const RMatd &a, const RMatd &b) { return (a - b).norm() / b.norm(); }
} // namespace

TEST(FdCheck, QuadraticIsExact)
{
    RMatd A(3, 3);
    A << 2, 0.5, -1, 0.5, 3, 0.2, -1, 0.2, 1.5;
    const ScalarFn<double> f = [&](const RVecd &x) { return x.dot(A * x); };
    RVecd x(3);
    x << 0.3, -1.2, 2.0;
    const auto r = fd_check<double>(f, x, 2.0 * A * x);
    EXPECT_LT(r.max_rel_err, 1e-8);
}

TEST(FdCheck, NonFiniteThrows)
{
    const ScalarFn<double> f = [](const RVecd &x) { return std::log(x(0)); };
    RVecd x(1);
    x << 0.0;
    EXPECT_THROW(fd_check<double>(f, x, RVecd::Zero(1)), numerical_error);
}

TEST(Derivatives, RandomInstancesMatchFiniteDifferences)
{
    const auto rep = run_verification(25, 11);
    for (const auto &f : rep.failures)
        ADD_FAILURE() << f;
    EXPECT_LT(rep.worst.worst_gradient(), 1e-5);
    EXPECT_LT(rep.worst.worst_hessian(), 1e-4);
    EXPECT_LT(rep.worst.symmetry, 1e-10);
}

TEST(Derivatives, SixByTwoInstances)
{
    InstanceLimits lim;
    lim.min_sensors = lim.max_sensors = 6;
    lim.max_sources = 2;
    for (int i = 0; i < 10; ++i)
    {
        RngStream rng(99, {std::uint64_t(i)});
        auto inst = random_instance(rng, lim);
        const auto d = check_derivatives(inst);
        EXPECT_LT(d.worst_gradient(), 1e-5) << i;
        EXPECT_LT(d.worst_hessian(), 1e-4) << i;
    }
}

TEST(Derivatives, SumAssemblyIsExact)
{
    RngStream rng(5);
    const auto inst = random_instance(rng);
    const auto w = build_workspace<double>(inst.cov, inst.geometry, inst.theta, inst.lambda);
    const auto gb = gradient_blocks(w, CostKind::S);
    const RVecd gs = gb.assembled(CostKind::S);
    const RVecd sum = gb.assembled(CostKind::D) + gb.assembled(CostKind::C);
    EXPECT_EQ((gs - sum).cwiseAbs().maxCoeff(), 0.0);
    const auto hb = hessian_blocks(w, CostKind::S, false);
    const RMatd hs = hb.assembled(CostKind::S);
    EXPECT_EQ((hs - (hb.assembled(CostKind::D) + hb.assembled(CostKind::C))).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Derivatives, ReHadamardHalving)
{
    RngStream rng(8);
    const CMatd A = rng.complex_normal_matrix(5, 4);
    const CMatd B = rng.complex_normal_matrix(5, 4);
    const RMatd ref = A.real().cwiseProduct(B.real()) - A.imag().cwiseProduct(B.imag());
    EXPECT_EQ((re_hadamard<double>(A, B) - ref).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Derivatives, UniformHessianMatchesThetaBlockAtUnitNoise)
{
    RngStream rng(21);
    const auto inst = random_instance(rng);
    const auto w = build_uniform_workspace<double>(inst.cov, inst.geometry, inst.theta);
    const RMatd Ho = hess_dml_uniform(w, true);
    const auto hb = hessian_blocks(w, CostKind::D, false);
    EXPECT_LT((Ho - hb.H_Dtt).cwiseAbs().maxCoeff(), 1e-10 * Ho.cwiseAbs().maxCoeff());
    // Approximate form is the fourth summand, the same as the reduced theta block.
    const auto hr = hessian_blocks(w, CostKind::D, true);
    EXPECT_LT((hess_dml_uniform(w, false) - hr.H_Dtt).cwiseAbs().maxCoeff(), 1e-12 * Ho.cwiseAbs().maxCoeff());
}

TEST(Derivatives, FullSquareArrayGradient)
{
    // K = M: I - P = 0 so g_Dlambda = 2N / lambda and the uniform gradient vanishes.
    RngStream rng(3);
    const ArrayGeometry g = ArrayGeometry::ula(3);
    const CMatd Z = rng.complex_normal_matrix(3, 20);
    const auto cov = SampleCovariance<double>::from_snapshots(Z);
    RVecd th{{-0.6, 0.1, 0.7}};
    RVecd lam{{0.8, 1.1, 1.7}};
    const auto w = build_workspace<double>(cov, g, th, lam);
    const auto gb = gradient_blocks(w, CostKind::D);
    EXPECT_LT((gb.g_Dlambda - 40.0 * lam.cwiseInverse()).cwiseAbs().maxCoeff(), 1e-9);
    const auto wo = build_uniform_workspace<double>(cov, g, th);
    EXPECT_LT(grad_dml_uniform(wo).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Derivatives, AsymptoticSignature)
{
    const Asymptotic a(30.0);
    const auto w = build_workspace<double>(a.cov, a.g, a.theta, a.lambda);
    const auto gb = gradient_blocks(w, CostKind::S);
    const double N = 100.0;
    EXPECT_LT(gb.g_Dtheta.cwiseAbs().maxCoeff(), 1e-7 * N);
    EXPECT_LT(gb.g_Ctheta.cwiseAbs().maxCoeff(), 1e-7 * N);
    EXPECT_LT((gb.g_Dlambda + gb.g_Clambda).cwiseAbs().maxCoeff(), 1e-7 * N);
    EXPECT_GE(gb.g_Dlambda.minCoeff(), 0.0);
    // Lower bound on the largest entry from the row norms of Q.
    double sigma_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index m = 0; m < 11; ++m)
        sigma_min = std::min(sigma_min, w.Q.row(m).squaredNorm() / a.lambda(m));
    EXPECT_GE(gb.g_Dlambda.maxCoeff(), 2.0 * N * sigma_min);
}

TEST(Derivatives, ReducedHessianAsymptotic)
{
    const Asymptotic a(30.0);
    const auto w = build_workspace<double>(a.cov, a.g, a.theta, a.lambda);
    const RMatd full = hessian(w, CostKind::S, false);
    const RMatd red = hessian(w, CostKind::S, true);
    EXPECT_LT(rel_norm(red, full), 1e-3);
}

TEST(Derivatives, UniformApproximationAsymptotic)
{
    // Uniform noise, true angles, R_z = Phi_o R_s Phi_o^H + I. The exact
    // Hessian reduces to -R_s o (D^H (I-P) D)^T and the approximation to
    // -(R_s + Minv) o (D^H (I-P) D)^T, so they agree once R_s >> Minv.
    const ArrayGeometry g = ArrayGeometry::ula(11);
    RVecd th{{-0.2513, 0.1571, 1.005}};
    CMatd Rs0 = CMatd::Zero(3, 3);
    Rs0.diagonal() << 1.0, 0.64, 0.25;
    const CMatd Phi_o = steering_set<double>(g, th).Phi_o;
    for (double scale : {1.0, 1e7})
    {
        const CMatd Rs = scale * Rs0;
        CMatd R = Phi_o * Rs * Phi_o.adjoint() + CMatd::Identity(11, 11);
        const auto cov = SampleCovariance<double>::from_matrix(R, 100);
        const auto w = build_uniform_workspace<double>(cov, g, th);
        EXPECT_LT(grad_dml_uniform(w).cwiseAbs().maxCoeff(), 1e-8 * 100 * scale);
        const RMatd ex = hess_dml_uniform(w, true);
        const RMatd ap = hess_dml_uniform(w, false);
        const CMatd Wd = w.D.adjoint() * w.complement(w.D);
        const RMatd ex_closed = -200.0 * re_hadamard<double>(Rs, Wd.transpose());
        const RMatd gap = -200.0 * re_hadamard<double>(w.Minv, Wd.transpose());
        EXPECT_LT(rel_norm(ex, ex_closed), 1e-9);
        if (scale == 1.0)
            EXPECT_LT(rel_norm(ap - ex, gap), 1e-9);
        else
            EXPECT_LT(rel_norm(ap, ex), 1e-6);
    }
}
