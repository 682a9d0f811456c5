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

#include "apn/harness.hpp"
#include "apn/music.hpp"

#include <gtest/gtest.h>

using namespace apn;

TEST(Music, NoiselessSingleSource)
{
    const auto g = ArrayGeometry::ula(8);
    const CVecd phi = steering(g, 0.37);
    const MusicOptions opts;
    const auto r = music_estimate(phi * phi.adjoint(), g, 1, opts);
    EXPECT_FALSE(r.padded);
    EXPECT_LT(std::abs(r.theta(0) - 0.37), pi_v<double> / double(opts.grid_factor * 8));
}

TEST(Music, RotationOfNoiseSubspace)
{
    const auto g = ArrayGeometry::ula(9);
    RngStream rng(4);
    const CMatd Z = rng.complex_normal_matrix(9, 40);
    const CMatd R = Z * Z.adjoint() / 40.0;
    const CMatd En = music_noise_subspace(R, 2);
    const CMatd U = random_unitary(7, 12);
    const RVecd grid = uniform_angle_grid(64);
    const RVecd a = music_pseudospectrum(En, g, grid);
    const RVecd b = music_pseudospectrum(En * U, g, grid);
    EXPECT_LT(((a - b).cwiseQuotient(a)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Music, ScaleInvariance)
{
    ScenarioConfig c = uncorrelated_scenario();
    c.snr_db = {20.0};
    const SourceModel m = source_model(c);
    const CMatd Z = trial_snapshots(c, m, 0, 0);
    const CMatd R = Z * Z.adjoint() / 100.0;
    const auto a = music_estimate(R, c.geometry(), 3);
    const auto b = music_estimate(4.0 * R, c.geometry(), 3);
    EXPECT_LT((a.theta - b.theta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Music, PaddingWhenPeaksAreMissing)
{
    // One source, asked for three: the remaining picks are flagged as padding.
    const auto g = ArrayGeometry::ula(4);
    const CVecd phi = steering(g, 0.1);
    CMatd R = phi * phi.adjoint();
    R.diagonal().array() += 1e-3;
    const auto r = music_estimate(R, g, 3);
    EXPECT_EQ(r.theta.size(), 3);
    EXPECT_TRUE(r.padded);
}

TEST(Music, Validation)
{
    const auto g = ArrayGeometry::ula(4);
    EXPECT_THROW(music_estimate(CMatd::Identity(4, 4), g, 4), dimension_error);
    EXPECT_THROW(music_estimate(CMatd::Identity(3, 3), g, 1), dimension_error);
    MusicOptions small;
    small.grid_factor = 2;
    EXPECT_THROW(music_estimate(CMatd::Identity(4, 4), g, 1, small), std::invalid_argument);
}

TEST(Music, FloorAboveStochasticMl)
{
    ScenarioConfig c = uncorrelated_scenario();
    c.snr_db = {30.0};
    c.trials = 20;
    c.estimators = {Estimator::MUSIC, Estimator::SML};
    const auto r = run_monte_carlo(c, 1);
    EXPECT_GT(r.aggregate(30.0, Estimator::MUSIC).rmse, r.aggregate(30.0, Estimator::SML).rmse);
}

TEST(Music, CorrelatedSourcesFail)
{
    ScenarioConfig c = correlated_scenario();
    c.snr_db = {30.0};
    c.trials = 20;
    c.estimators = {Estimator::MUSIC, Estimator::SML};
    const auto r = run_monte_carlo(c, 1);
    EXPECT_GT(r.aggregate(30.0, Estimator::MUSIC).rmse, 10.0 * r.aggregate(30.0, Estimator::SML).rmse);
}
