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

#ifndef APN_RESULT_HPP
#define APN_RESULT_HPP

#include "apn/types.hpp"

#include <array>
#include <cctype>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace apn
{
    enum class Estimator
    {
        MUSIC,
        DMLo,
        DML,
        DML_alt,
        SML,
        SML_alt,
        SML_red
    };

    inline constexpr std::array<Estimator, 7> all_estimators{Estimator::MUSIC,   Estimator::DMLo, Estimator::DML,
                                                             Estimator::DML_alt, Estimator::SML,  Estimator::SML_alt,
                                                             Estimator::SML_red};

    inline std::string_view estimator_name(Estimator e)
    {
        switch (e)
        {
        case Estimator::MUSIC:
            return "MUSIC";
        case Estimator::DMLo:
            return "DMLo";
        case Estimator::DML:
            return "DML";
        case Estimator::DML_alt:
            return "DML-alt";
        case Estimator::SML:
            return "SML";
        case Estimator::SML_alt:
            return "SML-alt";
        case Estimator::SML_red:
            return "SML-red";
        }
        return "?";
    }

    // Accepts the display names and a few spellings ("sml_red", "dmlo", ...).
    inline Estimator parse_estimator(std::string_view s)
    {
        std::string k;
        for (char c : s)
            k += (c == '_') ? '-' : char(std::tolower(static_cast<unsigned char>(c)));
        for (Estimator e : all_estimators)
        {
            std::string n;
            for (char c : estimator_name(e))
                n += char(std::tolower(static_cast<unsigned char>(c)));
            if (n == k)
                return e;
        }
        throw std::invalid_argument("unknown estimator '" + std::string(s) + "'");
    }

    inline bool uses_noise_model(Estimator e) { return e != Estimator::MUSIC && e != Estimator::DMLo; }

    struct TracePoint
    {
        int iteration = 0;
        double cost = 0.0;
        double max_lambda = 0.0; // 1 when lambda is not a parameter
    };

    // Counters for one add-angle + refinement round of the uniform stage.
    struct Stage1Record
    {
        Eigen::Index sources = 0; // angle count after the round
        int grid_evals = 0;
        int newton_iters = 0;
        int derivative_evals = 0; // cost + gradient + Hessian evaluations
        int rejected_evals = 0;   // cost-only evaluations at rejected trial points
    };

    struct EstimationResult
    {
        Estimator target = Estimator::SML;
        RVecd theta_hat;
        std::optional<RVecd> lambda_hat;
        double cost = 0.0;

        std::vector<Stage1Record> stage1;
        int iters_stage1 = 0; // iterations of the last uniform-stage Newton run
        int iters_stage3 = 0; // joint Newton iterations, or outer sweeps for the alt variants
        int stage3_derivative_evals = 0;
        int stage3_rejected_evals = 0;

        bool converged = false;
        bool diverged_lambda = false;
        bool collided = false;       // coalesced angles stopped an iteration
        bool init_fallback = false;  // noise initialisation fell back for some sensor
        bool peaks_padded = false;   // MUSIC found fewer than K separated peaks
        std::string note;

        std::vector<TracePoint> cost_trace;
        double flop_estimate = 0.0;
    };
} // namespace apn

#endif // APN_RESULT_HPP
