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

#include "apn/array_model.hpp"
#include "apn/verification.hpp"

#include <gtest/gtest.h>

using namespace apn;

TEST(Steering, BroadsideIsAllOnes)
{
    const CVecd v = steering(ArrayGeometry::ula(3), 0.0);
    for (Eigen::Index m = 0; m < 3; ++m)
        EXPECT_EQ(v(m), Complex<double>(1.0, 0.0));
}

TEST(Steering, EndfirePhases)
{
    const CVecd v = steering(ArrayGeometry::ula(2), pi_v<double> / 2 - 1e-9);
    EXPECT_NEAR(std::arg(v(0)), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(std::arg(v(1))), pi_v<double>, 1e-6);
}

TEST(Steering, MatchesElementwiseFormula)
{
    const double th = 0.1571;
    const CVecd v = steering(ArrayGeometry::ula(11), th);
    for (int m = 0; m < 11; ++m)
    {
        const Complex<double> ref = std::exp(Complex<double>(0.0, pi_v<double> * m * std::sin(th)));
        EXPECT_LT(std::abs(v(m) - ref), 1e-14);
        EXPECT_NEAR(std::abs(v(m)), 1.0, 1e-15);
    }
}

TEST(Steering, RejectsAnglesOutsideDomain)
{
    const auto g = ArrayGeometry::ula(4);
    EXPECT_THROW(steering(g, pi_v<double> / 2), domain_error);
    EXPECT_THROW(steering(g, -2.0), domain_error);
    EXPECT_THROW(steering(g, std::nan("")), domain_error);
}

TEST(Geometry, Validation)
{
    EXPECT_THROW(ArrayGeometry(RVecd{{0.0}}), domain_error);
    EXPECT_THROW(ArrayGeometry(RVecd{{0.0, 1.0, 1.0}}), domain_error);
    EXPECT_THROW(ArrayGeometry::ula(5, -1.0), domain_error);
    EXPECT_NEAR(ArrayGeometry::ula(11).exclusion_radius(), pi_v<double> / 10.0, 1e-15);
}

TEST(SteeringSet, BroadsideDerivative)
{
    const auto g = ArrayGeometry::ula(5);
    const auto s = steering_set<double>(g, RVecd{{0.0}});
    for (Eigen::Index m = 0; m < 5; ++m)
        EXPECT_LT(std::abs(s.D_o(m, 0) - Complex<double>(0.0, pi_v<double> * double(m))), 1e-14);
}

TEST(SteeringSet, DerivativesMatchFiniteDifferences)
{
    // 100 random (geometry, theta) draws.
    for (int i = 0; i < 100; ++i)
    {
        RngStream rng(5, {std::uint64_t(i)});
        const auto inst = random_instance(rng);
        const auto s = steering_set<double>(inst.geometry, inst.theta);
        const double h1 = 1e-5, h2 = 1e-4;
        for (Eigen::Index k = 0; k < inst.theta.size(); ++k)
        {
            const double t = inst.theta(k);
            const CVecd fp = steering(inst.geometry, t + h1), fm = steering(inst.geometry, t - h1);
            const CVecd d1 = (fp - fm) / (2 * h1);
            EXPECT_LT((d1 - s.D_o.col(k)).norm() / s.D_o.col(k).norm(), 1e-6) << i;
            const CVecd gp = steering(inst.geometry, t + h2), g0 = steering(inst.geometry, t),
                        gm = steering(inst.geometry, t - h2);
            const CVecd d2 = (gp - 2.0 * g0 + gm) / (h2 * h2);
            EXPECT_LT((d2 - s.D_o2.col(k)).norm() / s.D_o2.col(k).norm(), 1e-4) << i;
        }
    }
}

TEST(SteeringSet, ColumnWiseDependency)
{
    const auto g = ArrayGeometry::ula(7);
    RVecd th{{-0.4, 0.1, 0.9}};
    const auto a = steering_set<double>(g, th);
    th(1) += 0.05;
    const auto b = steering_set<double>(g, th);
    for (Eigen::Index k : {0, 2})
    {
        EXPECT_EQ(a.Phi_o.col(k), b.Phi_o.col(k));
        EXPECT_EQ(a.D_o.col(k), b.D_o.col(k));
        EXPECT_EQ(a.D_o2.col(k), b.D_o2.col(k));
    }
    EXPECT_GT((a.Phi_o.col(1) - b.Phi_o.col(1)).norm(), 0.1);
}

TEST(Synthesize, NoSignalVanishingNoise)
{
    const auto g = ArrayGeometry::ula(4);
    const RVecd th{{0.3}};
    const CMatd Z = synthesize(g, th, StochasticSource{CMatd::Zero(1, 1)}, RVecd::Constant(4, 1e8), 50, 1);
    EXPECT_LT(Z.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Synthesize, LargeSampleCovariance)
{
    const auto g = ArrayGeometry::ula(4);
    const RVecd th{{0.3}};
    const RVecd lam{{1.0, 2.0, 0.5, 1.5}};
    const CMatd Rs = CMatd::Identity(1, 1);
    const Eigen::Index N = 1000000;
    const CMatd Z = synthesize(g, th, StochasticSource{Rs}, lam, N, 3);
    const CMatd R = Z * Z.adjoint() / double(N);
    const CVecd phi = steering(g, 0.3);
    CMatd ref = phi * phi.adjoint();
    ref.diagonal() += lam.array().square().inverse().matrix().cast<Complex<double>>();
    EXPECT_LT((R - ref).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Synthesize, PerSensorNoiseVariance)
{
    const auto g = ArrayGeometry::ula(5);
    const RVecd lam{{0.5, 1.0, 2.0, 3.0, 4.0}};
    const Eigen::Index N = 100000;
    const CMatd Z = synthesize(g, RVecd{{0.0}}, StochasticSource{CMatd::Zero(1, 1)}, lam, N, 17);
    for (Eigen::Index m = 0; m < 5; ++m)
    {
        const double v = Z.row(m).squaredNorm() / double(N);
        EXPECT_NEAR(v * lam(m) * lam(m), 1.0, 0.03) << m;
    }
}

TEST(Synthesize, DeterministicAndSeeded)
{
    const auto g = ArrayGeometry::ula(6);
    const RVecd th{{-0.3, 0.4}};
    const CMatd S = CMatd::Random(2, 20);
    const RVecd lam = RVecd::Ones(6);
    const CMatd a = synthesize(g, th, DeterministicSource{S}, lam, 20, 99);
    const CMatd b = synthesize(g, th, DeterministicSource{S}, lam, 20, 99);
    EXPECT_EQ(a, b);
    const CMatd c = synthesize(g, th, DeterministicSource{S}, lam, 20, 100);
    EXPECT_NE(a, c);
    // The stored waveforms are used verbatim.
    const CMatd quiet = synthesize(g, th, DeterministicSource{S}, RVecd::Constant(6, 1e9), 20, 1);
    EXPECT_LT((quiet - steering_set<double>(g, th).Phi_o * S).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_THROW(synthesize(g, th, DeterministicSource{S}, lam, 21, 1), dimension_error);
    EXPECT_THROW(synthesize(g, th, StochasticSource{CMatd::Identity(3, 3)}, lam, 20, 1), dimension_error);
}

TEST(RandomUnitary, Unitarity)
{
    EXPECT_NEAR(std::abs(random_unitary(1, 4)(0, 0)), 1.0, 1e-15);
    for (Eigen::Index K = 1; K <= 16; ++K)
    {
        const CMatd U = random_unitary(K, std::uint64_t(K));
        EXPECT_LT((U.adjoint() * U - CMatd::Identity(K, K)).cwiseAbs().maxCoeff(), 1e-12) << K;
    }
}

TEST(RandomUnitary, CorrelatedSourceEigenvalues)
{
    const RVecd v{{2.337, 0.06604, 0.0004642}};
    const CMatd U = random_unitary(3, 2);
    const CMatd Rs = U * v.cast<Complex<double>>().asDiagonal() * U.adjoint();
    Eigen::SelfAdjointEigenSolver<CMatd> es(Rs);
    RVecd ev = es.eigenvalues();
    std::sort(ev.data(), ev.data() + 3, std::greater<>());
    EXPECT_LT((ev - v).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ScaleForSnr, UnitAnchor)
{
    // One source at broadside with unit power: signal power 1 per sensor.
    const auto g = ArrayGeometry::ula(4);
    const RVecd th{{0.0}};
    const SourceModel m = StochasticSource{CMatd::Identity(1, 1)};
    const RVecd lam = scale_for_snr(g, th, m, RVecd::Ones(4), 0.0);
    EXPECT_LT((lam - RVecd::Ones(4)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(snr_db(g, th, m, lam), 0.0, 1e-12);
}

TEST(ScaleForSnr, TrendAndScaling)
{
    const auto g = ArrayGeometry::ula(11);
    const RVecd th{{-0.2513, 0.1571, 1.005}};
    CMatd Rs = CMatd::Zero(3, 3);
    Rs.diagonal() << 1.0, 0.64, 0.25;
    const SourceModel m = StochasticSource{Rs};
    const RVecd trend = linear_trend(11);
    for (Eigen::Index i = 0; i < 11; ++i)
        EXPECT_NEAR(trend(i), 1.0 + 0.9 * double(i), 1e-14);
    const RVecd a = scale_for_snr(g, th, m, trend, 10.0);
    const RVecd b = scale_for_snr(g, th, m, trend, 30.0);
    EXPECT_NEAR(a(10) / a(0), 10.0, 1e-13);
    EXPECT_NEAR(b(3) / a(3), 10.0, 1e-12);
    EXPECT_NEAR(snr_db(g, th, m, b), 30.0, 1e-10);
    EXPECT_THROW(scale_for_snr(g, th, m, trend, std::numeric_limits<double>::infinity()), domain_error);
    EXPECT_THROW(scale_for_snr(g, th, m, RVecd::Zero(11), 0.0), domain_error);
}

TEST(ScaleForSnr, DeterministicUsesSampleCovariance)
{
    const auto g = ArrayGeometry::ula(6);
    const RVecd th{{0.2}};
    CMatd S(1, 4);
    S << 1.0, -1.0, Complex<double>(0, 2), 0.0; // (1/N) S S^H = 6/4
    const RVecd lam = scale_for_snr(g, th, DeterministicSource{S}, RVecd::Ones(6), 0.0);
    EXPECT_NEAR(lam(0), std::sqrt(1.0 / 1.5), 1e-14);
}
