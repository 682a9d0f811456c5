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
#include "apn/experiments.hpp"
#include "apn/ml_core.hpp"
#include "apn/verification.hpp"

#include <gtest/gtest.h>

using namespace apn;

namespace
{
    RandomInstance instance(std::uint64_t seed, Eigen::Index M = 6, Eigen::Index K = 2)
    {
        InstanceLimits lim;
        lim.min_sensors = lim.max_sensors = M;
        lim.max_sources = K;
        RngStream rng(seed);
        RandomInstance inst = random_instance(rng, lim);
        while (inst.theta.size() != K)
            inst = random_instance(rng, lim);
        return inst;
    }

    double max_abs(const CMatd &A) { return A.cwiseAbs().maxCoeff(); }
} // namespace

TEST(Workspace, FullRankProjection)
{
    const auto g = ArrayGeometry::ula(3);
    const RVecd th{{-0.6, 0.1, 0.7}};
    RngStream rng(1);
    const CMatd Z = rng.complex_normal_matrix(3, 10);
    const auto cov = SampleCovariance<double>::from_snapshots(Z);
    const auto w = build_workspace<double>(cov, g, th, RVecd(RVecd::Ones(3)));
    EXPECT_LT(max_abs(w.P - CMatd::Identity(3, 3)), 1e-12);
    EXPECT_NEAR((w.P_z * w.R_zl).trace().real(), 3.0, 1e-10);
    EXPECT_NEAR(cost_dml_uniform(w), 0.0, 1e-10);
}

TEST(Workspace, UnitNoiseKeepsSignature)
{
    const auto inst = instance(2);
    const auto w = build_workspace<double>(inst.cov, inst.geometry, inst.theta, RVecd(RVecd::Ones(6)));
    EXPECT_EQ(w.Phi, steering_set<double>(inst.geometry, inst.theta).Phi_o);
}

TEST(Workspace, ProjectionMatchesDenseFormula)
{
    const auto inst = instance(3);
    const auto w = build_workspace<double>(inst.cov, inst.geometry, inst.theta, inst.lambda);
    const CMatd Phi = inst.lambda.asDiagonal() * steering_set<double>(inst.geometry, inst.theta).Phi_o;
    const CMatd P = Phi * (Phi.adjoint() * Phi).inverse() * Phi.adjoint();
    EXPECT_LT(max_abs(w.P - P), 1e-10);
    const CMatd Pz = Phi * (Phi.adjoint() * w.R_zl * Phi).inverse() * Phi.adjoint();
    EXPECT_LT(max_abs(w.P_z - Pz), 1e-9);
}

TEST(Workspace, IdentitiesOnRandomInstances)
{
    const auto rep = run_verification(200, 23);
    for (const auto &f : rep.failures)
        ADD_FAILURE() << f;
    EXPECT_LT(rep.worst_identity.p_idempotent, 1e-10);
    EXPECT_LT(rep.worst_identity.p_hermitian, 1e-10);
    EXPECT_LT(rep.worst_identity.trace_pz_rzl, 1e-9);
    EXPECT_LT(rep.worst_identity.c_inverse, 1e-9);
}

TEST(Workspace, CoalescedAnglesAreRankDeficient)
{
    const auto g = ArrayGeometry::ula(5);
    const auto cov = SampleCovariance<double>::from_matrix(CMatd::Identity(5, 5), 10);
    const RVecd th{{0.3, 0.3 + 1e-15}};
    EXPECT_THROW(build_workspace<double>(cov, g, th, RVecd(RVecd::Ones(5))), rank_deficient_error);
}

TEST(Workspace, SampleCovarianceValidation)
{
    CMatd R = CMatd::Identity(3, 3);
    R(0, 1) = 0.5;
    EXPECT_THROW(SampleCovariance<double>::from_matrix(R, 4), domain_error);
    EXPECT_THROW(SampleCovariance<double>::from_matrix(-CMatd::Identity(3, 3), 4), domain_error);
    EXPECT_THROW(SampleCovariance<double>::from_matrix(CMatd::Identity(3, 3), 0), dimension_error);
}

TEST(Costs, UniformCostSpecialCases)
{
    const auto g = ArrayGeometry::ula(6);
    const RVecd th{{-0.2, 0.5}};
    const auto cov = SampleCovariance<double>::from_matrix(CMatd::Identity(6, 6), 40);
    const auto w = build_uniform_workspace<double>(cov, g, th);
    EXPECT_NEAR(cost_dml_uniform(w), -40.0 * 4.0, 1e-10);

    const auto inst = instance(4);
    const auto wu = build_uniform_workspace<double>(inst.cov, inst.geometry, inst.theta);
    const CMatd Po = wu.Phi * (wu.Phi.adjoint() * wu.Phi).inverse() * wu.Phi.adjoint();
    const double dense = -double(inst.cov.N) * ((CMatd::Identity(6, 6) - Po) * inst.cov.Rz).trace().real();
    EXPECT_NEAR(cost_dml_uniform(wu), dense, 1e-10 * std::abs(dense));
    EXPECT_EQ(cost_dml(wu), cost_dml_uniform(wu));
    const auto wl = build_workspace<double>(inst.cov, inst.geometry, inst.theta, inst.lambda);
    EXPECT_THROW(cost_dml_uniform(wl), domain_error);
}

TEST(Costs, ConcentrationAndPerturbations)
{
    for (std::uint64_t s = 10; s < 30; ++s)
    {
        const auto inst = instance(s, 7, 2);
        RngStream rng(s, {1});
        const auto id = check_identities(inst, rng);
        EXPECT_LT(id.dml_concentration, 1e-8) << s;
        EXPECT_LT(id.sml_concentration, 1e-8) << s;
        EXPECT_LE(id.dml_perturbation_gain, 1e-10) << s;
        EXPECT_LE(id.sml_perturbation_gain, 1e-10) << s;
    }
}

TEST(Costs, ScalingDataQuadruplesTraceTerm)
{
    const auto inst = instance(5);
    const auto w1 = build_workspace<double>(inst.cov, inst.geometry, inst.theta, inst.lambda);
    const auto cov2 = SampleCovariance<double>::from_snapshots(2.0 * inst.Z);
    const auto w2 = build_workspace<double>(cov2, inst.geometry, inst.theta, inst.lambda);
    const double tr = detail::residual_trace(w1);
    EXPECT_NEAR(cost_dml(w2) - cost_dml(w1), -double(w1.N) * 3.0 * tr, 1e-9 * std::abs(cost_dml(w1)));
}

TEST(Costs, StochasticDecomposition)
{
    const auto inst = instance(6);
    const auto w = build_workspace<double>(inst.cov, inst.geometry, inst.theta, inst.lambda);
    EXPECT_EQ(cost_sml(w), cost_dml(w) + cost_c(w));
    EXPECT_EQ(cost(w, CostKind::S), cost_sml(w));
    EXPECT_EQ(cost(w, CostKind::D), cost_dml(w));
}

TEST(Costs, FullRankStochasticCost)
{
    const auto g = ArrayGeometry::ula(4);
    const RVecd th{{-0.9, -0.2, 0.3, 0.8}};
    RngStream rng(8);
    const auto cov = SampleCovariance<double>::from_snapshots(rng.complex_normal_matrix(4, 30));
    const RVecd lam{{1.0, 1.5, 0.7, 2.0}};
    const auto w = build_workspace<double>(cov, g, th, lam);
    Eigen::SelfAdjointEigenSolver<CMatd> es(w.R_zl, Eigen::EigenvaluesOnly);
    const double logdet = es.eigenvalues().array().log().sum();
    const double ref = 30.0 * (2.0 * log_det_lambda(lam) - logdet);
    EXPECT_NEAR(cost_sml(w), ref, 1e-9 * std::abs(ref));
}

TEST(Costs, IndefiniteCThrows)
{
    // Rank-one covariance with K = 2: Q^H R_zl Q is singular.
    const auto g = ArrayGeometry::ula(5);
    const CVecd v = steering(g, 0.1);
    const auto cov = SampleCovariance<double>::from_matrix(v * v.adjoint(), 1);
    const auto w = build_workspace<double>(cov, g, RVecd{{-0.5, 0.6}}, RVecd(RVecd::Ones(5)));
    EXPECT_THROW(cost_sml(w), not_positive_definite_error);
}

TEST(Costs, PermutationInvariance)
{
    const auto inst = instance(9, 8, 3);
    const auto a = build_workspace<double>(inst.cov, inst.geometry, inst.theta, inst.lambda);
    RVecd th = inst.theta;
    std::swap(th(0), th(2));
    const auto b = build_workspace<double>(inst.cov, inst.geometry, th, inst.lambda);
    EXPECT_NEAR(cost_dml(a), cost_dml(b), 1e-12 * std::abs(cost_dml(a)));
    EXPECT_NEAR(cost_sml(a), cost_sml(b), 1e-12 * std::abs(cost_sml(a)));
    const auto ua = build_uniform_workspace<double>(inst.cov, inst.geometry, inst.theta);
    const auto ub = build_uniform_workspace<double>(inst.cov, inst.geometry, th);
    EXPECT_NEAR(cost_dml_uniform(ua), cost_dml_uniform(ub), 1e-12 * std::abs(cost_dml_uniform(ua)));
}

TEST(ConcentratedRs, RecoversSourceCovariance)
{
    const auto g = ArrayGeometry::ula(11);
    const RVecd th{{-0.2513, 0.1571, 1.005}};
    CMatd Rs = CMatd::Zero(3, 3);
    Rs.diagonal() << 1.0, 0.64, 0.25;
    Rs(0, 1) = Complex<double>(0.2, 0.1);
    Rs(1, 0) = std::conj(Rs(0, 1));
    const RVecd lam = linear_trend(11);
    // Whitened: R_zl = Phi R_s Phi^H + I.
    const auto cov = asymptotic_covariance(g, th, Rs, lam, 100);
    const auto w = build_workspace<double>(cov, g, th, lam);
    EXPECT_LT(max_abs(concentrated_rs(w) - Rs), 1e-9);
}

TEST(ConcentratedRs, SingleSourceWhiteData)
{
    const auto g = ArrayGeometry::ula(5);
    const auto cov = SampleCovariance<double>::from_matrix(CMatd::Identity(5, 5), 10);
    const auto w = build_workspace<double>(cov, g, RVecd{{0.4}}, RVecd(RVecd::Ones(5)));
    // White data carries no source power: Phi^+ Phi^+H cancels Minv.
    EXPECT_NEAR(std::abs(concentrated_rs(w)(0, 0)), 0.0, 1e-14);
}

TEST(ConcentratedRs, ReproducesC)
{
    const auto inst = instance(12, 8, 3);
    const auto w = build_workspace<double>(inst.cov, inst.geometry, inst.theta, inst.lambda);
    const CMatd C = CMatd::Identity(8, 8) + w.Phi * concentrated_rs(w) * w.Phi.adjoint();
    const CMatd I = CMatd::Identity(8, 8);
    const CMatd C_ref = I - w.P + w.P * w.R_zl * w.P;
    EXPECT_LT(max_abs(C - C_ref), 1e-10 * std::max(1.0, max_abs(C_ref)));
}
