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

#ifndef APN_TYPES_HPP
#define APN_TYPES_HPP

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace apn
{
    // Dense containers parameterised on the real scalar type. The numerical
    // core is instantiated with double in production and with long double by
    // the finite-difference oracle.
    template <typename T>
    using Complex = std::complex<T>;
    template <typename T>
    using CMat = Eigen::Matrix<std::complex<T>, Eigen::Dynamic, Eigen::Dynamic>;
    template <typename T>
    using CVec = Eigen::Matrix<std::complex<T>, Eigen::Dynamic, 1>;
    template <typename T>
    using RMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    template <typename T>
    using RVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

    using CMatd = CMat<double>;
    using CVecd = CVec<double>;
    using RMatd = RMat<double>;
    using RVecd = RVec<double>;

    template <typename T>
    inline constexpr T pi_v = std::numbers::pi_v<T>;

    // Error hierarchy. Input validation failures derive from
    // std::invalid_argument, numerical failures from std::runtime_error.
    struct domain_error : std::invalid_argument
    {
        using std::invalid_argument::invalid_argument;
    };

    struct dimension_error : std::invalid_argument
    {
        using std::invalid_argument::invalid_argument;
    };

    // Signature matrix lost column rank (coalesced angles).
    struct rank_deficient_error : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    // Q^H R_zl Q (or another required matrix) is not positive definite.
    struct not_positive_definite_error : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    struct initialization_error : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    struct numerical_error : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    // Arithmetic-operation tally. One complex multiply-add is charged
    // `complex_madd` real flops (8 by default), one real multiply-add 2.
    struct FlopCounter
    {
        double complex_madd = 8.0;
        double total = 0.0;

        // Complex (m x k) * (k x n) product.
        void cmatmul(Eigen::Index m, Eigen::Index k, Eigen::Index n)
        {
            total += complex_madd * double(m) * double(k) * double(n);
        }
        // Complex elementwise work over `count` entries.
        void celementwise(Eigen::Index count, double per_entry = 8.0) { total += per_entry * double(count); }
        void real(double flops) { total += flops; }
    };

    namespace detail
    {
        inline void count_cmatmul(FlopCounter *fc, Eigen::Index m, Eigen::Index k, Eigen::Index n)
        {
            if (fc)
                fc->cmatmul(m, k, n);
        }
        inline void count_elementwise(FlopCounter *fc, Eigen::Index count, double per_entry = 8.0)
        {
            if (fc)
                fc->celementwise(count, per_entry);
        }
        inline void count_real(FlopCounter *fc, double flops)
        {
            if (fc)
                fc->real(flops);
        }
    } // namespace detail
} // namespace apn

#endif // APN_TYPES_HPP
