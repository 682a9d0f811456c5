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

#ifndef APN_MUSIC_HPP
#define APN_MUSIC_HPP

#include "apn/array_model.hpp"
#include "apn/optimizer.hpp"
#include "apn/result.hpp"
#include "apn/types.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace apn
{
    // Plain MUSIC on R_z (no prewhitening), grid search + parabolic refinement.
    struct MusicOptions
    {
        Eigen::Index grid_factor = 32; // grid_size = grid_factor * M
        bool refine = true;
    };

    // Noise subspace: eigenvectors of the M - K smallest eigenvalues.
    inline CMatd music_noise_subspace(const CMatd &Rz, Eigen::Index K)
    {
        const Eigen::Index M = Rz.rows();
        if (Rz.cols() != M)
            throw dimension_error("music: covariance must be square");
        if (K < 1 || K >= M)
            throw dimension_error("music: need 1 <= K < M");
        // Eigenvalues come back in ascending order.
        Eigen::SelfAdjointEigenSolver<CMatd> es(0.5 * (Rz + Rz.adjoint()));
        if (es.info() != Eigen::Success)
            throw numerical_error("music: eigendecomposition failed");
        return es.eigenvectors().leftCols(M - K);
    }

    // 1 / ||E_n^H phi(theta)||^2 at each angle.
    inline RVecd music_pseudospectrum(const CMatd &En, const ArrayGeometry &geometry, const RVecd &angles)
    {
        RVecd out(angles.size());
        for (Eigen::Index g = 0; g < angles.size(); ++g)
        {
            const CVecd phi = steering<double>(geometry, angles(g));
            const double d = (En.adjoint() * phi).squaredNorm();
            out(g) = d > 0.0 ? 1.0 / d : std::numeric_limits<double>::infinity();
        }
        return out;
    }

    struct MusicResult
    {
        RVecd theta;
        bool padded = false; // fewer than K separated peaks; filled from best remaining grid points
    };

    inline MusicResult music_estimate(const CMatd &Rz, const ArrayGeometry &geometry, Eigen::Index K,
                                      const MusicOptions &opts = {})
    {
        const Eigen::Index M = geometry.size();
        if (Rz.rows() != M)
            throw dimension_error("music: covariance size does not match array");
        const Eigen::Index G = opts.grid_factor * M;
        if (G < 4 * M)
            throw std::invalid_argument("music: grid must have at least 4 M points");

        const CMatd En = music_noise_subspace(Rz, K);
        const RVecd grid = uniform_angle_grid(G);
        const RVecd spec = music_pseudospectrum(En, geometry, grid);
        const double r_excl = geometry.exclusion_radius();

        // Order grid points by decreasing value, ties by index.
        std::vector<Eigen::Index> order(static_cast<std::size_t>(G));
        std::iota(order.begin(), order.end(), Eigen::Index(0));
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return spec(a) > spec(b); });

        auto is_peak = [&](Eigen::Index g) {
            const bool left = g == 0 || spec(g) >= spec(g - 1);
            const bool right = g + 1 == G || spec(g) >= spec(g + 1);
            return left && right;
        };
        std::vector<Eigen::Index> picked;
        auto separated = [&](Eigen::Index g) {
            for (Eigen::Index p : picked)
                if (std::abs(grid(g) - grid(p)) < r_excl)
                    return false;
            return true;
        };
        for (Eigen::Index g : order)
            if (Eigen::Index(picked.size()) < K && is_peak(g) && separated(g))
                picked.push_back(g);

        MusicResult out;
        if (Eigen::Index(picked.size()) < K)
        {
            out.padded = true;
            for (Eigen::Index g : order)
                if (Eigen::Index(picked.size()) < K && separated(g))
                    picked.push_back(g);
            for (Eigen::Index g : order)
                if (Eigen::Index(picked.size()) < K && std::find(picked.begin(), picked.end(), g) == picked.end())
                    picked.push_back(g);
        }

        out.theta.resize(K);
        const double step = pi_v<double> / double(G);
        for (Eigen::Index k = 0; k < K; ++k)
        {
            const Eigen::Index g = picked[std::size_t(k)];
            double th = grid(g);
            if (opts.refine && g > 0 && g + 1 < G && std::isfinite(spec(g)))
            {
                const double fm = spec(g - 1), f0 = spec(g), fp = spec(g + 1);
                const double den = fm - 2.0 * f0 + fp;
                if (den < 0.0)
                    th += std::clamp(0.5 * (fm - fp) / den, -0.5, 0.5) * step;
            }
            out.theta(k) = th;
        }
        return out;
    }

    // Wrapper producing the common result record.
    inline EstimationResult music_as_result(const CMatd &Rz, const ArrayGeometry &geometry, Eigen::Index K,
                                            const MusicOptions &opts = {})
    {
        const MusicResult mr = music_estimate(Rz, geometry, K, opts);
        EstimationResult r;
        r.target = Estimator::MUSIC;
        r.theta_hat = mr.theta;
        r.converged = true;
        r.peaks_padded = mr.padded;
        return r;
    }
} // namespace apn

#endif // APN_MUSIC_HPP
