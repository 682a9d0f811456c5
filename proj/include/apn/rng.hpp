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

#ifndef APN_RNG_HPP
#define APN_RNG_HPP

#include "apn/types.hpp"

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace apn
{
    // SplitMix64 finaliser, used to turn (seed, counter...) tuples into
    // well-mixed engine seeds.
    inline constexpr std::uint64_t splitmix64(std::uint64_t x)
    {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> counters)
    {
        std::uint64_t h = splitmix64(master);
        for (auto c : counters)
            h = splitmix64(h ^ splitmix64(c + 0x632BE59BD9B4E019ULL));
        return h;
    }

    // Independent random stream keyed by a master seed and a tuple of
    // counters (e.g. SNR index and trial index). Streams with equal keys
    // produce identical sequences regardless of the order in which they are
    // created, which keeps serial and threaded sweeps bit-identical.
    class RngStream
    {
    public:
        explicit RngStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}
        RngStream(std::uint64_t master, std::initializer_list<std::uint64_t> counters)
            : engine_(derive_seed(master, counters)) {}

        double normal() { return normal_(engine_); }
        double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

        // Circularly-symmetric complex Gaussian with E|z|^2 = variance.
        std::complex<double> complex_normal(double variance = 1.0)
        {
            const double s = std::sqrt(variance / 2.0);
            const double re = normal();
            const double im = normal();
            return {s * re, s * im};
        }

        CMatd complex_normal_matrix(Eigen::Index rows, Eigen::Index cols, double variance = 1.0)
        {
            CMatd out(rows, cols);
            for (Eigen::Index j = 0; j < cols; ++j)
                for (Eigen::Index i = 0; i < rows; ++i)
                    out(i, j) = complex_normal(variance);
            return out;
        }

        std::mt19937_64 &engine() { return engine_; }

    private:
        std::mt19937_64 engine_;
        std::normal_distribution<double> normal_{0.0, 1.0};
    };
} // namespace apn

#endif // APN_RNG_HPP
