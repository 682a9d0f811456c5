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

#ifndef APN_OPTIMIZER_HPP
#define APN_OPTIMIZER_HPP

#include "apn/array_model.hpp"
#include "apn/derivatives.hpp"
#include "apn/flops.hpp"
#include "apn/ml_core.hpp"
#include "apn/result.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

namespace apn
{
    enum class HessianMode
    {
        full,
        reduced,
        approx // treated as reduced for the joint costs
    };

    struct NewtonOptions
    {
        int max_iters = 50;
        double step_tol = 1e-8;          // stop when the Newton step has inf-norm below this
        double backtrack_factor = 0.5;
        double min_mu = 1.0 / 1048576.0; // 2^-20
        HessianMode hessian_mode = HessianMode::full;

        double lambda_floor = 0.1;       // lambda_m may shrink to at most this fraction per step
        double divergence_ratio = 1e6;   // lambda_m above this multiple of its start -> diverged
        double decrement_tol = 1e-20;    // g' (-H)^-1 g below this (relative to |f|) -> stationary

        void validate() const
        {
            if (max_iters < 1)
                throw std::invalid_argument("NewtonOptions: max_iters must be >= 1");
            if (!(step_tol > 0.0))
                throw std::invalid_argument("NewtonOptions: step_tol must be positive");
            if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0))
                throw std::invalid_argument("NewtonOptions: backtrack_factor must lie in (0, 1)");
            if (!(min_mu > 0.0 && min_mu <= 1.0))
                throw std::invalid_argument("NewtonOptions: min_mu must lie in (0, 1]");
            if (!(lambda_floor > 0.0 && lambda_floor < 1.0))
                throw std::invalid_argument("NewtonOptions: lambda_floor must lie in (0, 1)");
            if (!(divergence_ratio > 1.0))
                throw std::invalid_argument("NewtonOptions: divergence_ratio must exceed 1");
            if (!(decrement_tol >= 0.0))
                throw std::invalid_argument("NewtonOptions: decrement_tol must be non-negative");
        }
    };

    // ------------------------------------------------------------------------
    // Modified Cholesky. With the diagonal scaling S = diag(|H_ii|^-1/2), the
    // shift is applied to A = S (-H) S: the smallest tau on a doubling ladder
    // (from 1e-8 ||A||_inf) for which A + tau I factors, capped by A's
    // Gershgorin bound so the loop always ends. In the original variables
    // H_hat = H - tau diag(|H_ii|): a diagonal shift that is relative per
    // coordinate, which matters because the angle and noise blocks differ by
    // many orders of magnitude. tau = 0 when H is already negative definite.

    struct ModifiedCholesky
    {
        RMatd H_hat;
        double tau = 0.0;
        RVecd scale;           // S
        Eigen::LLT<RMatd> llt; // of S (-H_hat) S

        // (-H_hat)^{-1} g, the ascent direction.
        RVecd direction(const RVecd &g) const
        {
            return scale.cwiseProduct(llt.solve(scale.cwiseProduct(g)));
        }
    };

    inline ModifiedCholesky modified_cholesky(const RMatd &H)
    {
        if (H.rows() != H.cols())
            throw dimension_error("modified_cholesky: matrix must be square");
        if (!H.allFinite())
            throw numerical_error("modified_cholesky: non-finite Hessian");
        const Eigen::Index n = H.rows();
        const RMatd Hs = 0.5 * (H + H.transpose());

        ModifiedCholesky out;
        const double hmax = n ? Hs.diagonal().cwiseAbs().maxCoeff() : 0.0;
        out.scale.resize(n);
        for (Eigen::Index i = 0; i < n; ++i)
        {
            const double d = std::max(std::abs(Hs(i, i)), 1e-14 * hmax);
            out.scale(i) = d > 0.0 ? 1.0 / std::sqrt(d) : 1.0;
        }
        const RMatd A = -(out.scale.asDiagonal() * Hs * out.scale.asDiagonal());

        auto factors = [](const RMatd &X, Eigen::LLT<RMatd> &llt) {
            llt.compute(X);
            if (llt.info() != Eigen::Success)
                return false;
            const RMatd &L = llt.matrixLLT();
            for (Eigen::Index i = 0; i < X.rows(); ++i)
                if (!(L(i, i) > 0.0))
                    return false;
            return true;
        };

        if (factors(A, out.llt))
        {
            out.H_hat = H;
            return out;
        }

        const double norm_inf = A.cwiseAbs().rowwise().sum().maxCoeff();
        double gersh = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            gersh = std::max(gersh, A.row(i).cwiseAbs().sum() - std::abs(A(i, i)) - A(i, i));
        // Strictly above the bound, so A + tau I is strictly diagonally dominant.
        const double cap = gersh * (1.0 + 1e-10) + std::max(1e-300, 1e-12 * norm_inf);
        double tau = std::max(1e-8 * norm_inf, std::numeric_limits<double>::min());
        for (;;)
        {
            tau = std::min(tau, cap);
            const RMatd As = A + tau * RMatd::Identity(n, n);
            if (factors(As, out.llt) || tau >= cap)
            {
                out.tau = tau;
                // Only the diagonal moves: H_hat = H - tau diag(d).
                out.H_hat = Hs;
                out.H_hat.diagonal() -= tau * out.scale.array().square().inverse().matrix();
                return out;
            }
            tau *= 2.0;
        }
    }

    // ------------------------------------------------------------------------
    // Objective seen by the Newton iteration. Parameters are laid out as
    // x = [theta (theta_count); lambda (lambda_count)].

    struct Evaluation
    {
        double cost = 0.0;
        RVecd grad;
        RMatd hess;
    };

    struct Objective
    {
        Eigen::Index theta_count = 0;
        Eigen::Index lambda_count = 0;
        std::function<double(const RVecd &)> value;
        std::function<Evaluation(const RVecd &)> evaluate;

        Eigen::Index size() const { return theta_count + lambda_count; }

        bool in_domain(const RVecd &x) const
        {
            for (Eigen::Index k = 0; k < theta_count; ++k)
                if (!angle_in_domain(x(k)))
                    return false;
            for (Eigen::Index m = theta_count; m < size(); ++m)
                if (!(x(m) > 0.0) || !std::isfinite(x(m)))
                    return false;
            return true;
        }
    };

    struct NewtonResult
    {
        RVecd x;
        double cost = 0.0;
        int iterations = 0;
        int derivative_evals = 0;
        int rejected_evals = 0;
        bool converged = false;
        bool diverged_lambda = false;
        bool collided = false;
        std::vector<TracePoint> trace;
    };

    namespace detail
    {
        inline double max_lambda(const Objective &obj, const RVecd &x)
        {
            return obj.lambda_count ? x.tail(obj.lambda_count).maxCoeff() : 1.0;
        }
    } // namespace detail

    // Damped Newton ascent x <- x + mu (-H_hat)^{-1} g. `lambda_ref` is the
    // reference for divergence detection (defaults to the lambda part of x0).
    inline NewtonResult newton_maximize(const Objective &obj, const RVecd &x0, const NewtonOptions &opts,
                                        const RVecd *lambda_ref = nullptr)
    {
        opts.validate();
        if (x0.size() != obj.size())
            throw dimension_error("newton_maximize: parameter size mismatch");
        if (!obj.in_domain(x0))
            throw domain_error("newton_maximize: starting point outside the parameter domain");
        const Eigen::Index T = obj.theta_count;
        const Eigen::Index L = obj.lambda_count;
        const RVecd ref = lambda_ref ? *lambda_ref : RVecd(x0.tail(L));

        NewtonResult res;
        res.x = x0;
        Evaluation ev = obj.evaluate(x0);
        ++res.derivative_evals;
        if (!std::isfinite(ev.cost))
            throw numerical_error("newton_maximize: cost is not finite at the starting point");
        res.cost = ev.cost;
        res.trace.push_back({0, ev.cost, detail::max_lambda(obj, x0)});

        for (int it = 0; it < opts.max_iters; ++it)
        {
            const ModifiedCholesky mc = modified_cholesky(ev.hess);
            RVecd delta = mc.direction(ev.grad);
            if (!delta.allFinite())
                return res; // converged stays false

            const double decrement = ev.grad.dot(delta);
            if (decrement <= opts.decrement_tol * std::max(1.0, std::abs(ev.cost)))
            {
                res.converged = true;
                return res;
            }

            // Keep lambda positive: scale the whole step so that lambda_m >= floor * lambda_m.
            double scale = 1.0;
            for (Eigen::Index m = 0; m < L; ++m)
            {
                const double lm = res.x(T + m);
                const double dm = delta(T + m);
                if (dm < 0.0)
                    scale = std::min(scale, (1.0 - opts.lambda_floor) * lm / -dm);
            }
            delta *= scale;

            // The cost is only accurate to ~1e-12 relative. Once the predicted
            // gain is below that, the line search cannot tell ascent from noise,
            // but the gradient still can.
            const double rounding = 1e-10 * std::max(1.0, std::abs(res.cost));
            const bool cost_blind = it > 0 && decrement <= rounding;

            double mu = 1.0;
            bool accepted = false;
            RVecd trial;
            double trial_cost = 0.0;
            while (!cost_blind && mu >= opts.min_mu)
            {
                trial = res.x + mu * delta;
                if (obj.in_domain(trial))
                {
                    try
                    {
                        trial_cost = obj.value(trial);
                        accepted = std::isfinite(trial_cost) && trial_cost > res.cost;
                    }
                    catch (const rank_deficient_error &)
                    {
                        // Coalesced angles: stop with the pre-collision estimate.
                        res.collided = true;
                        res.converged = false;
                        return res;
                    }
                    catch (const not_positive_definite_error &)
                    {
                    }
                }
                if (accepted)
                    break;
                ++res.rejected_evals;
                mu *= opts.backtrack_factor;
            }
            Evaluation polished;
            bool polish = false;
            if (cost_blind)
            {
                // Full step, kept if the cost is unchanged within rounding and
                // the decrement shrinks.
                mu = 1.0;
                trial = res.x + delta;
                if (obj.in_domain(trial))
                {
                    try
                    {
                        polished = obj.evaluate(trial);
                        ++res.derivative_evals;
                        if (std::isfinite(polished.cost) && polished.cost >= res.cost - rounding)
                        {
                            const RVecd d2 = modified_cholesky(polished.hess).direction(polished.grad);
                            polish = d2.allFinite() && polished.grad.dot(d2) < 0.25 * decrement;
                        }
                    }
                    catch (const std::exception &)
                    {
                    }
                }
            }
            if (!accepted && !polish)
            {
                // No representable ascent left. At the start this is a failure;
                // later it means the iterate sits at the maximum within rounding.
                res.converged = it > 0;
                return res;
            }

            // Undamped size: a step cut short by backtracking is not convergence.
            const double step = delta.cwiseAbs().maxCoeff();
            res.x = trial;
            if (polish)
                ev = std::move(polished);
            else
            {
                ev = obj.evaluate(trial);
                ++res.derivative_evals;
            }
            res.cost = ev.cost;
            ++res.iterations;
            res.trace.push_back({res.iterations, ev.cost, detail::max_lambda(obj, trial)});

            for (Eigen::Index m = 0; m < L; ++m)
                if (res.x(T + m) > opts.divergence_ratio * ref(m))
                {
                    res.diverged_lambda = true;
                    res.converged = false;
                    return res;
                }
            if (step < opts.step_tol)
            {
                res.converged = true;
                return res;
            }
        }
        return res;
    }

    // ------------------------------------------------------------------------
    // Objectives built from the concentrated costs.

    inline Objective make_uniform_objective(const SampleCovariance<double> &cov, const ArrayGeometry &geometry,
                                            Eigen::Index K, bool exact_hessian)
    {
        Objective obj;
        obj.theta_count = K;
        obj.value = [&cov, geometry](const RVecd &th) {
            return cost_dml_uniform(build_uniform_workspace<double>(cov, geometry, th));
        };
        obj.evaluate = [&cov, geometry, exact_hessian](const RVecd &th) {
            const auto w = build_uniform_workspace<double>(cov, geometry, th);
            return Evaluation{cost_dml_uniform(w), grad_dml_uniform(w), hess_dml_uniform(w, exact_hessian)};
        };
        return obj;
    }

    // Joint (theta, lambda) objective for L_D or L_S.
    inline Objective make_joint_objective(const SampleCovariance<double> &cov, const ArrayGeometry &geometry,
                                          Eigen::Index K, CostKind which, bool reduced)
    {
        Objective obj;
        obj.theta_count = K;
        obj.lambda_count = geometry.size();
        obj.value = [&cov, geometry, K, which](const RVecd &x) {
            return cost(build_workspace<double>(cov, geometry, RVecd(x.head(K)), RVecd(x.tail(x.size() - K))),
                        which);
        };
        obj.evaluate = [&cov, geometry, K, which, reduced](const RVecd &x) {
            const auto w = build_workspace<double>(cov, geometry, RVecd(x.head(K)), RVecd(x.tail(x.size() - K)));
            const double c = cost(w, which);
            return Evaluation{c, gradient(w, which), hessian(w, which, reduced)};
        };
        return obj;
    }

    // Theta-only objective with lambda held fixed.
    inline Objective make_theta_objective(const SampleCovariance<double> &cov, const ArrayGeometry &geometry,
                                          Eigen::Index K, const RVecd &lambda, CostKind which, bool reduced)
    {
        Objective obj;
        obj.theta_count = K;
        obj.value = [&cov, geometry, lambda, which](const RVecd &th) {
            return cost(build_workspace<double>(cov, geometry, th, lambda), which);
        };
        obj.evaluate = [&cov, geometry, lambda, which, reduced](const RVecd &th) {
            const auto w = build_workspace<double>(cov, geometry, th, lambda);
            const Eigen::Index K = th.size();
            const double c = cost(w, which);
            const RVecd g = gradient(w, which).head(K);
            const RMatd H = hessian(w, which, reduced).topLeftCorner(K, K);
            return Evaluation{c, g, H};
        };
        return obj;
    }

    // Lambda-only objective with theta held fixed; the steering set is cached.
    inline Objective make_lambda_objective(const SampleCovariance<double> &cov, const ArrayGeometry &geometry,
                                           const RVecd &theta, CostKind which, bool reduced)
    {
        Objective obj;
        obj.lambda_count = geometry.size();
        const auto steer = std::make_shared<SteeringSet<double>>(steering_set<double>(geometry, theta));
        obj.value = [&cov, steer, theta, which](const RVecd &lam) {
            return cost(build_workspace<double>(cov, *steer, lam, theta), which);
        };
        obj.evaluate = [&cov, steer, theta, which, reduced](const RVecd &lam) {
            const auto w = build_workspace<double>(cov, *steer, lam, theta);
            const Eigen::Index M = lam.size();
            const double c = cost(w, which);
            const RVecd g = gradient(w, which).tail(M);
            const RMatd H = hessian(w, which, reduced).bottomRightCorner(M, M);
            return Evaluation{c, g, H};
        };
        return obj;
    }

    // ------------------------------------------------------------------------
    // Line search that adds one angle to the current set.

    struct GridSearchOptions
    {
        Eigen::Index grid_factor = 16; // G = grid_factor * M
        bool refine = true;
    };

    // theta_g = -pi/2 + (g + 1/2) pi / G, g = 0..G-1.
    inline RVecd uniform_angle_grid(Eigen::Index G)
    {
        RVecd out(G);
        const double pi = pi_v<double>;
        for (Eigen::Index g = 0; g < G; ++g)
            out(g) = -pi / 2 + (double(g) + 0.5) * pi / double(G);
        return out;
    }

    struct GridValues
    {
        RVecd angles;
        RVecd values; // -inf where excluded
        int evaluated = 0;
    };

    // L_Do([theta_k; theta_g]) on the grid, evaluated incrementally from the
    // QR factor of Phi_o(theta_k):
    //   L = -N (tr R_z - tr Q^H R_z Q - r^H R_z r / r^H r),  r = (I - Q Q^H) phi.
    inline GridValues ap_grid_values(const SampleCovariance<double> &cov, const ArrayGeometry &geometry,
                                     const RVecd &theta_k, Eigen::Index G)
    {
        const Eigen::Index M = geometry.size();
        const Eigen::Index k = theta_k.size();
        if (k >= M)
            throw rank_deficient_error("ap_add_angle: angle count must stay below the sensor count");
        const double r_excl = geometry.exclusion_radius();
        const double N = double(cov.N);
        const double trR = cov.Rz.trace().real();

        CMatd Q(M, 0);
        if (k > 0)
        {
            const CMatd Phi = steering_set<double>(geometry, theta_k).Phi_o;
            Eigen::HouseholderQR<CMatd> qr(Phi);
            Q = qr.householderQ() * CMatd::Identity(M, k);
        }
        const CMatd RQ = cov.Rz * Q;
        const double trQRQ = (Q.adjoint() * RQ).trace().real();

        GridValues gv;
        gv.angles = uniform_angle_grid(G);
        gv.values = RVecd::Constant(G, -std::numeric_limits<double>::infinity());
        for (Eigen::Index g = 0; g < G; ++g)
        {
            const double th = gv.angles(g);
            bool excluded = false;
            for (Eigen::Index j = 0; j < k && !excluded; ++j)
                excluded = std::abs(th - theta_k(j)) < r_excl;
            if (excluded)
                continue;
            const CVecd phi = steering<double>(geometry, th);
            const CVecd r = phi - Q * (Q.adjoint() * phi);
            const double rr = r.squaredNorm();
            ++gv.evaluated;
            if (!(rr > 1e-12 * double(M)))
                continue;
            const double rRr = r.dot(cov.Rz * r).real();
            gv.values(g) = -N * (trR - trQRQ - rRr / rr);
        }
        return gv;
    }

    struct AddAngleResult
    {
        RVecd theta;
        int grid_evals = 0;
    };

    inline AddAngleResult ap_add_angle(const SampleCovariance<double> &cov, const ArrayGeometry &geometry,
                                       const RVecd &theta_k, const GridSearchOptions &opts = {})
    {
        const Eigen::Index G = opts.grid_factor * geometry.size();
        const GridValues gv = ap_grid_values(cov, geometry, theta_k, G);
        Eigen::Index best = -1;
        for (Eigen::Index g = 0; g < G; ++g)
            if (std::isfinite(gv.values(g)) && (best < 0 || gv.values(g) > gv.values(best)))
                best = g;
        if (best < 0)
            throw initialization_error("ap_add_angle: every grid point is excluded");

        double th = gv.angles(best);
        if (opts.refine && best > 0 && best + 1 < G && std::isfinite(gv.values(best - 1)) &&
            std::isfinite(gv.values(best + 1)))
        {
            const double fm = gv.values(best - 1), f0 = gv.values(best), fp = gv.values(best + 1);
            const double den = fm - 2.0 * f0 + fp;
            if (den < 0.0)
            {
                const double step = pi_v<double> / double(G);
                const double off = std::clamp(0.5 * (fm - fp) / den, -0.5, 0.5) * step;
                const double cand = th + off;
                bool clash = false;
                for (Eigen::Index j = 0; j < theta_k.size(); ++j)
                    clash = clash || std::abs(cand - theta_k(j)) < geometry.exclusion_radius();
                if (!clash)
                    th = cand;
            }
        }
        AddAngleResult out;
        out.theta.resize(theta_k.size() + 1);
        out.theta << theta_k, th;
        out.grid_evals = gv.evaluated;
        return out;
    }

    // ------------------------------------------------------------------------
    // Noise initialisation by covariance fitting:
    //   lambda_m = sqrt((1 - [P_o]_mm) / [R_z (I - P_o)]_mm),
    // falling back to [R_z]_mm^{-1/2} for sensors where that is undefined.

    enum class NoiseInitMethod
    {
        covariance_fit, // closed form per sensor
        projected_fit   // linear system on the projected residual
    };

    struct NoiseInit
    {
        RVecd lambda;
        bool fallback = false;
    };

    inline NoiseInit init_noise(const SampleCovariance<double> &cov, const ArrayGeometry &geometry,
                                const RVecd &theta)
    {
        const Eigen::Index M = geometry.size();
        CMatd P = CMatd::Zero(M, M);
        if (theta.size() > 0)
            P = build_uniform_workspace<double>(cov, geometry, theta).P;
        const CMatd RIP = cov.Rz - cov.Rz * P;
        NoiseInit out;
        out.lambda.resize(M);
        for (Eigen::Index m = 0; m < M; ++m)
        {
            const double pmm = P(m, m).real();
            const double den = RIP(m, m).real();
            if (pmm < 1.0 - 1e-9 && den > 0.0)
                out.lambda(m) = std::sqrt((1.0 - pmm) / den);
            else
            {
                const double rmm = cov.Rz(m, m).real();
                if (!(rmm > 0.0))
                    throw initialization_error("init_noise: sensor with zero power");
                out.lambda(m) = 1.0 / std::sqrt(rmm);
                out.fallback = true;
            }
        }
        return out;
    }

    // Projected fit: at the true angles (I - P_o) R_z (I - P_o) carries no
    // signal and no signal x noise cross terms, and its diagonal equals
    // |I - P_o|^2 sigma^2 (elementwise square) in the noise powers
    // sigma_m^2 = lambda_m^-2. Solves that M x M system; entries that come
    // out non-positive use the diagonal-only estimate instead.
    inline NoiseInit init_noise_projected(const SampleCovariance<double> &cov, const ArrayGeometry &geometry,
                                          const RVecd &theta)
    {
        const Eigen::Index M = geometry.size();
        CMatd IP = CMatd::Identity(M, M);
        if (theta.size() > 0)
            IP -= build_uniform_workspace<double>(cov, geometry, theta).P;
        const RVecd b = (IP * cov.Rz * IP).diagonal().real();
        const RMatd A = IP.cwiseAbs2();
        Eigen::FullPivLU<RMatd> lu(A);
        RVecd d = lu.isInvertible() ? RVecd(lu.solve(b)) : RVecd::Constant(M, -1.0);
        NoiseInit out;
        out.lambda.resize(M);
        for (Eigen::Index m = 0; m < M; ++m)
        {
            double v = d(m);
            if (!(v > 0.0) || !std::isfinite(v))
            {
                v = A(m, m) > 1e-9 ? b(m) / A(m, m) : cov.Rz(m, m).real();
                out.fallback = true;
            }
            if (!(v > 0.0))
                throw initialization_error("init_noise_projected: sensor with zero residual power");
            out.lambda(m) = 1.0 / std::sqrt(v);
        }
        return out;
    }

    // ------------------------------------------------------------------------
    // Full pipeline.

    struct ApnOptions
    {
        NewtonOptions newton;
        GridSearchOptions grid;
        int max_outer = 100;          // sweeps for the alt variants
        int alt_inner_iters = 1;      // Newton steps per block and sweep
        bool stage1_exact_hessian = false;
        NoiseInitMethod noise_init = NoiseInitMethod::projected_fit;
    };

    namespace detail
    {
        inline void append_trace(std::vector<TracePoint> &dst, const std::vector<TracePoint> &src, int &counter)
        {
            for (std::size_t i = 0; i < src.size(); ++i)
            {
                if (!dst.empty() && i == 0)
                    continue; // first point repeats the previous end point
                dst.push_back({counter++, src[i].cost, src[i].max_lambda});
            }
        }

        inline void uniform_stage(const SampleCovariance<double> &cov, const ArrayGeometry &geometry,
                                  Eigen::Index K, const ApnOptions &opts, EstimationResult &res)
        {
            NewtonOptions nopt = opts.newton;
            RVecd theta(0);
            for (Eigen::Index k = 0; k < K; ++k)
            {
                Stage1Record rec;
                const AddAngleResult add = ap_add_angle(cov, geometry, theta, opts.grid);
                rec.sources = k + 1;
                rec.grid_evals = add.grid_evals;
                const Objective obj = make_uniform_objective(cov, geometry, k + 1, opts.stage1_exact_hessian);
                const NewtonResult nr = newton_maximize(obj, add.theta, nopt);
                theta = nr.x;
                rec.newton_iters = nr.iterations;
                rec.derivative_evals = nr.derivative_evals;
                rec.rejected_evals = nr.rejected_evals;
                res.stage1.push_back(rec);
                res.iters_stage1 = nr.iterations;
                res.cost = nr.cost;
                res.converged = nr.converged;
                res.collided = res.collided || nr.collided;
            }
            res.theta_hat = theta;
        }
    } // namespace detail

    inline EstimationResult apn_estimate(const SampleCovariance<double> &cov, const ArrayGeometry &geometry,
                                         Eigen::Index K, Estimator target, const ApnOptions &opts = {})
    {
        const Eigen::Index M = geometry.size();
        if (cov.Rz.rows() != M)
            throw dimension_error("apn_estimate: covariance size does not match array");
        if (K < 1 || K >= M)
            throw dimension_error("apn_estimate: need 1 <= K < M");
        if (cov.N < K)
            throw dimension_error("apn_estimate: need N >= K");
        if (target == Estimator::MUSIC)
            throw std::invalid_argument("apn_estimate: MUSIC is not an APN target");

        EstimationResult res;
        res.target = target;
        detail::uniform_stage(cov, geometry, K, opts, res);
        if (target == Estimator::DMLo)
        {
            res.cost_trace.push_back({0, res.cost, 1.0});
            res.flop_estimate = total_flop_estimate(res, M, K);
            return res;
        }

        const NoiseInit ni = opts.noise_init == NoiseInitMethod::covariance_fit
                                 ? init_noise(cov, geometry, res.theta_hat)
                                 : init_noise_projected(cov, geometry, res.theta_hat);
        res.init_fallback = ni.fallback;
        res.lambda_hat = ni.lambda;
        const RVecd lambda0 = ni.lambda;
        const CostKind which =
            (target == Estimator::DML || target == Estimator::DML_alt) ? CostKind::D : CostKind::S;
        const bool reduced = target == Estimator::SML_red || opts.newton.hessian_mode != HessianMode::full;
        res.converged = false;

        try
        {
            if (target == Estimator::DML_alt || target == Estimator::SML_alt)
            {
                RVecd theta = res.theta_hat;
                RVecd lambda = lambda0;
                int counter = 0;
                NewtonOptions inner = opts.newton;
                inner.max_iters = opts.alt_inner_iters;
                for (int outer = 0; outer < opts.max_outer; ++outer)
                {
                    const Objective ot = make_theta_objective(cov, geometry, K, lambda, which, reduced);
                    const NewtonResult rt = newton_maximize(ot, theta, inner);
                    res.stage3_derivative_evals += rt.derivative_evals;
                    res.stage3_rejected_evals += rt.rejected_evals;
                    detail::append_trace(res.cost_trace, rt.trace, counter);
                    if (rt.collided)
                    {
                        res.collided = true;
                        break;
                    }
                    const double dtheta = (rt.x - theta).cwiseAbs().maxCoeff();
                    theta = rt.x;
                    res.theta_hat = theta;
                    res.cost = rt.cost;

                    const Objective ol = make_lambda_objective(cov, geometry, theta, which, reduced);
                    const NewtonResult rl = newton_maximize(ol, lambda, inner, &lambda0);
                    res.stage3_derivative_evals += rl.derivative_evals;
                    res.stage3_rejected_evals += rl.rejected_evals;
                    detail::append_trace(res.cost_trace, rl.trace, counter);
                    const double dlambda = (rl.x - lambda).cwiseAbs().maxCoeff();
                    lambda = rl.x;
                    res.lambda_hat = lambda;
                    res.cost = rl.cost;
                    res.iters_stage3 = outer + 1;
                    if (rl.diverged_lambda)
                    {
                        res.diverged_lambda = true;
                        break;
                    }
                    if (std::max(dtheta, dlambda) < opts.newton.step_tol)
                    {
                        res.converged = true;
                        break;
                    }
                }
            }
            else
            {
                const Objective obj = make_joint_objective(cov, geometry, K, which, reduced);
                RVecd x0(K + M);
                x0 << res.theta_hat, lambda0;
                const NewtonResult nr = newton_maximize(obj, x0, opts.newton);
                res.theta_hat = nr.x.head(K);
                res.lambda_hat = RVecd(nr.x.tail(M));
                res.cost = nr.cost;
                res.iters_stage3 = nr.iterations;
                res.stage3_derivative_evals = nr.derivative_evals;
                res.stage3_rejected_evals = nr.rejected_evals;
                res.converged = nr.converged;
                res.diverged_lambda = nr.diverged_lambda;
                res.collided = nr.collided;
                int counter = 0;
                detail::append_trace(res.cost_trace, nr.trace, counter);
            }
        }
        catch (const std::runtime_error &e)
        {
            // The joint cost could not be evaluated at the initial estimate
            // (e.g. Q^H R_zl Q singular); keep the uniform-stage angles.
            res.converged = false;
            res.note = e.what();
        }
        res.flop_estimate = total_flop_estimate(res, M, K);
        return res;
    }

    inline EstimationResult apn_estimate(const CMatd &Z, const ArrayGeometry &geometry, Eigen::Index K,
                                         Estimator target, const ApnOptions &opts = {})
    {
        return apn_estimate(SampleCovariance<double>::from_snapshots(Z), geometry, K, target, opts);
    }
} // namespace apn

#endif // APN_OPTIMIZER_HPP
