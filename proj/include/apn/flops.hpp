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

#ifndef APN_FLOPS_HPP
#define APN_FLOPS_HPP

#include "apn/result.hpp"

#include <cstdint>

namespace apn
{
    // Closed-form operation counts for one evaluation of the deterministic
    // and stochastic costs, alone and together with gradient and Hessian.
    // Integer arithmetic throughout.
    struct FlopPolynomials
    {
        std::int64_t cost_D = 0;
        std::int64_t cost_S = 0;
        std::int64_t cost_D_with_derivs = 0;
        std::int64_t cost_S_with_derivs = 0;
    };

    inline constexpr FlopPolynomials flop_polynomials(std::int64_t M, std::int64_t K)
    {
        const std::int64_t K2 = K * K, K3 = K2 * K, M2 = M * M;
        FlopPolynomials p;
        p.cost_D = -2 * K3 + 8 * K2 * M + 8 * K * M2 + 2 * K * M + 46 * M2 + 14;
        p.cost_S = -2 * K3 + 24 * K2 * M - 2 * K2 + 16 * K * M2 + 2 * K * M + 2 * K + 64 * M2 + 18;
        p.cost_D_with_derivs = 8 * K3 + 72 * K2 * M + 38 * K2 + 40 * K * M2 - 4 * K * M + 46 * M2 + 20;
        p.cost_S_with_derivs =
            24 * K3 + 112 * K2 * M + 80 * K2 + 192 * K * M2 + 37 * K * M + 3 * K + 236 * M2 + 3 * M + 32;
        return p;
    }

    // Flop estimate for a finished estimation, composed from the counters in
    // the result:
    //   uniform stage: sum over rounds of (grid evals + rejected trials) x cost_D
    //                  + derivative evaluations x cost_D_with_derivs,
    //   joint stage:   derivative evaluations x cost_{D,S}_with_derivs
    //                  + rejected trials x cost_{D,S}.
    // MUSIC is not modelled (0).
    inline double total_flop_estimate(const EstimationResult &r, Eigen::Index M, Eigen::Index K)
    {
        if (r.target == Estimator::MUSIC)
            return 0.0;
        double total = 0.0;
        for (const auto &s : r.stage1)
        {
            const auto p = flop_polynomials(M, s.sources);
            total += double(s.grid_evals + s.rejected_evals) * double(p.cost_D) +
                     double(s.derivative_evals) * double(p.cost_D_with_derivs);
        }
        if (!uses_noise_model(r.target))
            return total;
        const auto p = flop_polynomials(M, K);
        const bool det = r.target == Estimator::DML || r.target == Estimator::DML_alt;
        const double with = double(det ? p.cost_D_with_derivs : p.cost_S_with_derivs);
        const double alone = double(det ? p.cost_D : p.cost_S);
        total += double(r.stage3_derivative_evals) * with + double(r.stage3_rejected_evals) * alone;
        return total;
    }
} // namespace apn

#endif // APN_FLOPS_HPP
