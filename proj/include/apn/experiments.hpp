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

#ifndef APN_EXPERIMENTS_HPP
#define APN_EXPERIMENTS_HPP

#include "apn/derivatives.hpp"
#include "apn/harness.hpp"

#include <algorithm>
#include <vector>

namespace apn
{
    // Covariance at the asymptotic point: R_z = Phi_o R_s Phi_o^H + Lambda^-2,
    // so that the whitened covariance is exactly Phi R_s Phi^H + I.
    inline SampleCovariance<double> asymptotic_covariance(const ArrayGeometry &geometry, const RVecd &theta,
                                                          const CMatd &Rs, const RVecd &lambda, Eigen::Index N)
    {
        const CMatd Phi_o = steering_set<double>(geometry, theta).Phi_o;
        CMatd R = Phi_o * Rs * Phi_o.adjoint();
        R.diagonal() += lambda.cwiseAbs2().cwiseInverse().cast<Complex<double>>();
        return SampleCovariance<double>::from_matrix((0.5 * (R + R.adjoint())).eval(), N);
    }

    struct GradientSignature
    {
        double g_Dtheta_inf = 0.0;
        double g_Ctheta_inf = 0.0;
        double g_Slambda_inf = 0.0;
        double g_Dlambda_min = 0.0;
        double g_Dlambda_max = 0.0;
        double N = 0.0;

        // Angle gradients and the stochastic noise gradient vanish; the
        // deterministic noise gradient is nonnegative and not zero.
        bool holds(double rel = 1e-7) const
        {
            return g_Dtheta_inf < rel * N && g_Ctheta_inf < rel * N && g_Slambda_inf < rel * N &&
                   g_Dlambda_min >= 0.0 && g_Dlambda_max > 0.0;
        }
    };

    inline GradientSignature gradient_signature(const ScenarioConfig &c, double snr)
    {
        const ArrayGeometry g = c.geometry();
        const RVecd trend = linear_trend(g.size(), c.noise_trend_ratio);
        const RVecd lambda = scale_for_snr(g, c.theta_true, StochasticSource{c.Rs}, trend, snr);
        const auto cov = asymptotic_covariance(g, c.theta_true, c.Rs, lambda, c.snapshots);
        const auto w = build_workspace<double>(cov, g, c.theta_true, lambda);
        const auto gb = gradient_blocks(w, CostKind::S);
        GradientSignature s;
        s.N = double(c.snapshots);
        s.g_Dtheta_inf = gb.g_Dtheta.cwiseAbs().maxCoeff();
        s.g_Ctheta_inf = gb.g_Ctheta.cwiseAbs().maxCoeff();
        s.g_Slambda_inf = (gb.g_Dlambda + gb.g_Clambda).cwiseAbs().maxCoeff();
        s.g_Dlambda_min = gb.g_Dlambda.minCoeff();
        s.g_Dlambda_max = gb.g_Dlambda.maxCoeff();
        return s;
    }

    // Newton on L_D started at the true (theta, lambda) of one Monte Carlo
    // cell. The degenerate behaviour: every accepted step raises the cost,
    // max lambda never decreases and passes `growth` times its start, and the
    // run ends in divergence detection.
    struct DegeneracyTrial
    {
        int trial = 0;
        int iterations = 0;
        bool diverged = false;
        bool cost_increasing = true;
        bool lambda_monotone = true;
        double lambda_growth = 1.0; // largest max-lambda ratio before detection
        std::vector<TracePoint> trace;

        bool reproduced(double growth = 100.0) const
        {
            return diverged && cost_increasing && lambda_monotone && lambda_growth > growth;
        }
    };

    inline DegeneracyTrial dml_from_truth(const ScenarioConfig &c, const SourceModel &model, int snr_index,
                                          int trial, NewtonOptions opts = {})
    {
        const ArrayGeometry g = c.geometry();
        const Eigen::Index K = c.sources();
        const RVecd trend = linear_trend(g.size(), c.noise_trend_ratio);
        const RVecd lambda = scale_for_snr(g, c.theta_true, model, trend, c.snr_db[std::size_t(snr_index)]);
        const auto cov = SampleCovariance<double>::from_snapshots(trial_snapshots(c, model, snr_index, trial));
        const Objective obj = make_joint_objective(cov, g, K, CostKind::D, false);
        RVecd x0(K + g.size());
        x0 << c.theta_true, lambda;
        opts.max_iters = std::max(opts.max_iters, 200);
        const NewtonResult r = newton_maximize(obj, x0, opts);

        DegeneracyTrial d;
        d.trial = trial;
        d.iterations = r.iterations;
        d.diverged = r.diverged_lambda;
        d.trace = r.trace;
        const double l0 = r.trace.front().max_lambda;
        for (std::size_t i = 1; i < r.trace.size(); ++i)
        {
            if (!(r.trace[i].cost > r.trace[i - 1].cost))
                d.cost_increasing = false;
            if (r.trace[i].max_lambda < r.trace[i - 1].max_lambda)
                d.lambda_monotone = false;
            d.lambda_growth = std::max(d.lambda_growth, r.trace[i].max_lambda / l0);
        }
        return d;
    }

    inline std::vector<DegeneracyTrial> dml_degeneracy_study(const ScenarioConfig &c, double snr, int trials)
    {
        ScenarioConfig one = c;
        one.snr_db = {snr};
        const SourceModel model = source_model(one);
        std::vector<DegeneracyTrial> out;
        for (int t = 0; t < trials; ++t)
            out.push_back(dml_from_truth(one, model, 0, t, one.apn.newton));
        return out;
    }
} // namespace apn

#endif // APN_EXPERIMENTS_HPP
