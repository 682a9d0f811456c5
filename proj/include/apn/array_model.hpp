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

#ifndef APN_ARRAY_MODEL_HPP
#define APN_ARRAY_MODEL_HPP

#include "apn/rng.hpp"
#include "apn/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

namespace apn
{
    // Linear array. Sensor coordinates are in half-wavelengths, so a uniform
    // linear array with half-wavelength spacing has positions 0, 1, ..., M-1.
    class ArrayGeometry
    {
    public:
        ArrayGeometry() = default;
        explicit ArrayGeometry(RVecd positions) : positions_(std::move(positions)) { validate(); }

        static ArrayGeometry ula(Eigen::Index M, double spacing = 1.0)
        {
            if (M < 2)
                throw domain_error("ArrayGeometry: need at least 2 sensors");
            if (!(spacing > 0.0) || !std::isfinite(spacing))
                throw domain_error("ArrayGeometry: spacing must be positive");
            RVecd p(M);
            for (Eigen::Index m = 0; m < M; ++m)
                p(m) = spacing * double(m);
            return ArrayGeometry(std::move(p));
        }

        const RVecd &positions() const { return positions_; }
        Eigen::Index size() const { return positions_.size(); }
        double aperture() const { return positions_(positions_.size() - 1) - positions_(0); }

        // Exclusion radius used by grid searches: half the array beamwidth.
        double exclusion_radius() const { return pi_v<double> / aperture(); }

    private:
        void validate() const
        {
            if (positions_.size() < 2)
                throw domain_error("ArrayGeometry: need at least 2 sensors");
            for (Eigen::Index m = 0; m < positions_.size(); ++m)
            {
                if (!std::isfinite(positions_(m)))
                    throw domain_error("ArrayGeometry: non-finite position");
                if (m > 0 && !(positions_(m) > positions_(m - 1)))
                    throw domain_error("ArrayGeometry: positions must be strictly increasing");
            }
        }

        RVecd positions_;
    };

    template <typename T>
    bool angle_in_domain(T theta)
    {
        return std::isfinite(double(theta)) && std::abs(theta) < pi_v<T> / T(2);
    }

    // Throws unless every angle lies in (-pi/2, pi/2) and the set is
    // non-empty with pairwise distinct entries.
    template <typename T>
    void check_angles(const RVec<T> &theta)
    {
        if (theta.size() < 1)
            throw domain_error("angles: need at least one angle");
        for (Eigen::Index k = 0; k < theta.size(); ++k)
        {
            if (!angle_in_domain(theta(k)))
                throw domain_error("angles: value outside (-pi/2, pi/2)");
            for (Eigen::Index j = 0; j < k; ++j)
                if (theta(j) == theta(k))
                    throw domain_error("angles: duplicate angle");
        }
    }

    template <typename T>
    void check_noise(const RVec<T> &lambda, Eigen::Index M)
    {
        if (lambda.size() != M)
            throw dimension_error("noise profile: expected " + std::to_string(M) + " entries");
        for (Eigen::Index m = 0; m < M; ++m)
            if (!(lambda(m) > T(0)) || !std::isfinite(double(lambda(m))))
                throw domain_error("noise profile: inverse deviations must be positive and finite");
    }

    // phi_o(theta)_m = exp(i pi p_m sin theta).
    template <typename T = double>
    CVec<T> steering(const ArrayGeometry &geometry, T theta)
    {
        if (!angle_in_domain(theta))
            throw domain_error("steering: angle outside (-pi/2, pi/2)");
        const Eigen::Index M = geometry.size();
        CVec<T> out(M);
        const T s = std::sin(theta);
        for (Eigen::Index m = 0; m < M; ++m)
            out(m) = std::polar(T(1), pi_v<T> * T(geometry.positions()(m)) * s);
        return out;
    }

    // Steering matrix and its column-wise first and second angle derivatives.
    // Column k of each matrix depends on theta_k only.
    template <typename T>
    struct SteeringSet
    {
        CMat<T> Phi_o;
        CMat<T> D_o;
        CMat<T> D_o2;
    };

    template <typename T = double>
    SteeringSet<T> steering_set(const ArrayGeometry &geometry, const RVec<T> &theta)
    {
        check_angles(theta);
        const Eigen::Index M = geometry.size();
        const Eigen::Index K = theta.size();
        SteeringSet<T> out{CMat<T>(M, K), CMat<T>(M, K), CMat<T>(M, K)};
        const Complex<T> I(T(0), T(1));
        for (Eigen::Index k = 0; k < K; ++k)
        {
            const T s = std::sin(theta(k));
            const T c = std::cos(theta(k));
            for (Eigen::Index m = 0; m < M; ++m)
            {
                const T a = pi_v<T> * T(geometry.positions()(m));
                const Complex<T> phi = std::polar(T(1), a * s);
                const Complex<T> dphase = I * (a * c);
                out.Phi_o(m, k) = phi;
                out.D_o(m, k) = dphase * phi;
                out.D_o2(m, k) = (dphase * dphase - I * (a * s)) * phi;
            }
        }
        return out;
    }

    // Signal model: either a fixed K x N waveform matrix or a K x K source
    // covariance from which waveforms are drawn per trial.
    struct DeterministicSource
    {
        CMatd S;
    };

    struct StochasticSource
    {
        CMatd Rs;
    };

    using SourceModel = std::variant<DeterministicSource, StochasticSource>;

    inline void check_covariance(const CMatd &Rs)
    {
        if (Rs.rows() != Rs.cols() || Rs.rows() < 1)
            throw dimension_error("source covariance must be square and non-empty");
        const double herm = (Rs - Rs.adjoint()).cwiseAbs().maxCoeff();
        if (herm > 1e-12)
            throw domain_error("source covariance is not Hermitian");
        Eigen::SelfAdjointEigenSolver<CMatd> es(Rs, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-12)
            throw domain_error("source covariance is not positive semidefinite");
    }

    inline Eigen::Index source_count(const SourceModel &model)
    {
        return std::visit([](const auto &m) -> Eigen::Index {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, DeterministicSource>)
                return m.S.rows();
            else
                return m.Rs.rows();
        },
                          model);
    }

    // Effective source covariance: R_s itself, or (1/N) S S^H.
    inline CMatd effective_covariance(const SourceModel &model)
    {
        return std::visit([](const auto &m) -> CMatd {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, DeterministicSource>)
                return m.S * m.S.adjoint() / double(m.S.cols());
            else
                return m.Rs;
        },
                          model);
    }

    // Matrix square root factor L with L L^H = R for Hermitian PSD R.
    inline CMatd psd_factor(const CMatd &R)
    {
        Eigen::SelfAdjointEigenSolver<CMatd> es(R);
        RVecd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        return es.eigenvectors() * d.asDiagonal();
    }

    // Draws K x N waveforms with i.i.d. CN(0, R_s) columns.
    inline CMatd draw_waveforms(const CMatd &Rs, Eigen::Index N, RngStream &rng)
    {
        const CMatd W = rng.complex_normal_matrix(Rs.rows(), N);
        return psd_factor(Rs) * W;
    }

    // Z = Phi_o(theta) S + noise, noise column covariance Lambda^{-2}.
    inline CMatd synthesize(const ArrayGeometry &geometry, const RVecd &theta, const SourceModel &model,
                            const RVecd &lambda, Eigen::Index N, RngStream &rng)
    {
        const Eigen::Index M = geometry.size();
        check_angles(theta);
        check_noise(lambda, M);
        if (source_count(model) != theta.size())
            throw dimension_error("synthesize: source model size does not match number of angles");
        if (N < 1)
            throw dimension_error("synthesize: need at least one snapshot");

        CMatd S;
        if (const auto *det = std::get_if<DeterministicSource>(&model))
        {
            if (det->S.cols() != N)
                throw dimension_error("synthesize: deterministic waveform has wrong snapshot count");
            S = det->S;
        }
        else
        {
            const auto &sto = std::get<StochasticSource>(model);
            check_covariance(sto.Rs);
            S = draw_waveforms(sto.Rs, N, rng);
        }

        const auto st = steering_set<double>(geometry, theta);
        CMatd Z = st.Phi_o * S;
        for (Eigen::Index n = 0; n < N; ++n)
            for (Eigen::Index m = 0; m < M; ++m)
                Z(m, n) += rng.complex_normal(1.0 / (lambda(m) * lambda(m)));
        return Z;
    }

    inline CMatd synthesize(const ArrayGeometry &geometry, const RVecd &theta, const SourceModel &model,
                            const RVecd &lambda, Eigen::Index N, std::uint64_t seed)
    {
        RngStream rng(seed);
        return synthesize(geometry, theta, model, lambda, N, rng);
    }

    // Haar-distributed unitary matrix: QR of a complex Gaussian matrix with
    // the phases of R's diagonal folded into Q.
    inline CMatd random_unitary(Eigen::Index K, RngStream &rng)
    {
        if (K < 1)
            throw dimension_error("random_unitary: K must be positive");
        const CMatd G = rng.complex_normal_matrix(K, K);
        Eigen::HouseholderQR<CMatd> qr(G);
        CMatd Q = qr.householderQ() * CMatd::Identity(K, K);
        const CMatd &R = qr.matrixQR();
        for (Eigen::Index k = 0; k < K; ++k)
        {
            const auto r = R(k, k);
            const double a = std::abs(r);
            Q.col(k) *= (a > 0.0) ? r / a : std::complex<double>(1.0);
        }
        return Q;
    }

    inline CMatd random_unitary(Eigen::Index K, std::uint64_t seed)
    {
        RngStream rng(seed);
        return random_unitary(K, rng);
    }

    // Linear trend 1 + 9 (m-1)/(M-1): the last sensor's inverse deviation is
    // ten times the first one, i.e. a 20 dB spread in noise power.
    inline RVecd linear_trend(Eigen::Index M, double ratio = 10.0)
    {
        RVecd t(M);
        for (Eigen::Index m = 0; m < M; ++m)
            t(m) = 1.0 + (ratio - 1.0) * double(m) / double(M - 1);
        return t;
    }

    // Array-average signal power tr(Phi_o R_s Phi_o^H) / M.
    inline double signal_power(const ArrayGeometry &geometry, const RVecd &theta, const SourceModel &model)
    {
        const auto st = steering_set<double>(geometry, theta);
        const CMatd Rs = effective_covariance(model);
        return (st.Phi_o * Rs * st.Phi_o.adjoint()).trace().real() / double(geometry.size());
    }

    // SNR = (array-average signal power) / (array-average noise power).
    inline double snr_db(const ArrayGeometry &geometry, const RVecd &theta, const SourceModel &model,
                         const RVecd &lambda)
    {
        const double noise = lambda.array().square().inverse().mean();
        return 10.0 * std::log10(signal_power(geometry, theta, model) / noise);
    }

    // Returns c * trend, with c chosen so that snr_db(...) equals `snr`.
    inline RVecd scale_for_snr(const ArrayGeometry &geometry, const RVecd &theta, const SourceModel &model,
                               const RVecd &trend, double snr)
    {
        if (!std::isfinite(snr))
            throw domain_error("scale_for_snr: SNR must be finite");
        check_noise(trend, geometry.size());
        const double sig = signal_power(geometry, theta, model);
        if (!(sig > 0.0))
            throw domain_error("scale_for_snr: signal power must be positive");
        const double noise_unit = trend.array().square().inverse().mean();
        const double c = std::sqrt(std::pow(10.0, snr / 10.0) * noise_unit / sig);
        return c * trend;
    }
} // namespace apn

#endif // APN_ARRAY_MODEL_HPP
