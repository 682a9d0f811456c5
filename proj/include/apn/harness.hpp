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

#ifndef APN_HARNESS_HPP
#define APN_HARNESS_HPP

// Monte Carlo sweeps over SNR for a set of estimators, with CSV / JSON-lines
// output. Needs nlohmann/json (json.hpp) on the include path.

#include "apn/array_model.hpp"
#include "apn/music.hpp"
#include "apn/optimizer.hpp"
#include "apn/result.hpp"
#include "apn/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace apn
{
    // ------------------------------------------------------------------------
    // Scenario description.

    struct ScenarioConfig
    {
        std::string name = "uncorrelated";
        RVecd positions;                 // sensor positions, half wavelengths
        RVecd theta_true;
        bool deterministic = true;       // frozen waveform S vs. stochastic R_s
        CMatd Rs;                        // source covariance (stochastic) or the one S is drawn from
        double noise_trend_ratio = 10.0; // lambda_M / lambda_1 of the linear trend
        Eigen::Index snapshots = 100;
        std::vector<double> snr_db{0, 10, 20, 30, 40};
        int trials = 100;
        std::vector<Estimator> estimators{Estimator::MUSIC, Estimator::DMLo, Estimator::SML};
        std::uint64_t seed = 1;
        ApnOptions apn;
        MusicOptions music;

        Eigen::Index sources() const { return theta_true.size(); }
        ArrayGeometry geometry() const { return ArrayGeometry(positions); }

        void validate() const
        {
            if (trials < 1)
                throw std::invalid_argument("config: trials must be >= 1");
            if (snr_db.empty())
                throw std::invalid_argument("config: snr grid is empty");
            if (estimators.empty())
                throw std::invalid_argument("config: no estimators");
            if (theta_true.size() < 1 || theta_true.size() >= positions.size())
                throw std::invalid_argument("config: need 1 <= K < M");
            if (Rs.rows() != theta_true.size() || Rs.cols() != theta_true.size())
                throw std::invalid_argument("config: source covariance must be K x K");
            if (snapshots < theta_true.size())
                throw std::invalid_argument("config: need N >= K");
            if (theta_true.size() > 5)
                throw std::invalid_argument("config: permutation matching supports K <= 5");
            check_angles(theta_true);
            check_covariance(Rs);
            apn.newton.validate();
        }
    };

    // Three sources on an 11-sensor half-wavelength ULA, linear noise trend.
    inline ScenarioConfig uncorrelated_scenario()
    {
        ScenarioConfig c;
        c.name = "uncorrelated";
        c.positions = RVecd::LinSpaced(11, 0.0, 10.0);
        c.theta_true = RVecd{{-0.2513, 0.1571, 1.005}};
        c.Rs = CMatd::Zero(3, 3);
        c.Rs.diagonal() << 1.0, 0.64, 0.25;
        c.deterministic = true;
        return c;
    }

    // Same geometry; stochastic sources with eigenvalues (2.337, 0.06604,
    // 0.0004642) in a fixed random basis.
    inline ScenarioConfig correlated_scenario(std::uint64_t basis_seed = 2)
    {
        ScenarioConfig c = uncorrelated_scenario();
        c.name = "correlated";
        c.deterministic = false;
        const CMatd U = random_unitary(3, basis_seed);
        RVecd ev{{2.337, 0.06604, 0.0004642}};
        CMatd Rs = U * ev.cast<Complex<double>>().asDiagonal() * U.adjoint();
        c.Rs = (0.5 * (Rs + Rs.adjoint())).eval();
        return c;
    }

    // Waveforms of the deterministic model: drawn once from R_s, then frozen
    // for every trial and SNR.
    inline CMatd frozen_waveforms(const ScenarioConfig &c)
    {
        RngStream rng(c.seed, {0x5157A7E5ULL});
        return draw_waveforms(c.Rs, c.snapshots, rng);
    }

    inline SourceModel source_model(const ScenarioConfig &c)
    {
        if (c.deterministic)
            return DeterministicSource{frozen_waveforms(c)};
        return StochasticSource{c.Rs};
    }

    // ------------------------------------------------------------------------
    // JSON config. Recognised keys (all optional except where a preset is
    // absent): preset, name, sensors | positions, theta, source {model,
    // powers | eigenvalues + basis_seed}, noise_trend_ratio, snapshots,
    // snr_db, trials, estimators, seed, newton {...}, grid_factor,
    // music_grid_factor, max_outer.

    inline std::vector<Estimator> parse_estimator_list(const std::string &csv)
    {
        std::vector<Estimator> out;
        std::stringstream ss(csv);
        std::string item;
        while (std::getline(ss, item, ','))
        {
            item.erase(0, item.find_first_not_of(" \t"));
            item.erase(item.find_last_not_of(" \t") + 1);
            if (!item.empty())
                out.push_back(parse_estimator(item));
        }
        if (out.empty())
            throw std::invalid_argument("empty estimator list");
        return out;
    }

    inline HessianMode parse_hessian_mode(const std::string &s)
    {
        if (s == "full")
            return HessianMode::full;
        if (s == "reduced")
            return HessianMode::reduced;
        if (s == "approx")
            return HessianMode::approx;
        throw std::invalid_argument("unknown hessian_mode '" + s + "'");
    }

    inline ScenarioConfig config_from_json(const nlohmann::json &j)
    {
        ScenarioConfig c;
        const std::string preset = j.value("preset", std::string("uncorrelated"));
        std::uint64_t basis_seed = 2;
        if (j.contains("source") && j["source"].contains("basis_seed"))
            basis_seed = j["source"]["basis_seed"].get<std::uint64_t>();
        if (preset == "uncorrelated")
            c = uncorrelated_scenario();
        else if (preset == "correlated")
            c = correlated_scenario(basis_seed);
        else
            throw std::invalid_argument("config: unknown preset '" + preset + "'");

        c.name = j.value("name", preset);
        if (j.contains("positions"))
        {
            const auto v = j["positions"].get<std::vector<double>>();
            c.positions = Eigen::Map<const RVecd>(v.data(), Eigen::Index(v.size()));
        }
        else if (j.contains("sensors"))
        {
            const auto M = j["sensors"].get<Eigen::Index>();
            c.positions = RVecd::LinSpaced(M, 0.0, double(M - 1));
        }
        if (j.contains("theta"))
        {
            const auto v = j["theta"].get<std::vector<double>>();
            c.theta_true = Eigen::Map<const RVecd>(v.data(), Eigen::Index(v.size()));
        }
        if (j.contains("source"))
        {
            const auto &s = j["source"];
            const std::string model = s.value("model", c.deterministic ? "deterministic" : "stochastic");
            if (model != "deterministic" && model != "stochastic")
                throw std::invalid_argument("config: source.model must be deterministic or stochastic");
            c.deterministic = model == "deterministic";
            if (s.contains("powers"))
            {
                const auto p = s["powers"].get<std::vector<double>>();
                c.Rs = CMatd::Zero(Eigen::Index(p.size()), Eigen::Index(p.size()));
                for (std::size_t k = 0; k < p.size(); ++k)
                    c.Rs(Eigen::Index(k), Eigen::Index(k)) = p[k];
            }
            else if (s.contains("eigenvalues"))
            {
                const auto e = s["eigenvalues"].get<std::vector<double>>();
                const Eigen::Index K = Eigen::Index(e.size());
                const CMatd U = random_unitary(K, basis_seed);
                RVecd ev = Eigen::Map<const RVecd>(e.data(), K);
                CMatd Rs = U * ev.cast<Complex<double>>().asDiagonal() * U.adjoint();
                c.Rs = (0.5 * (Rs + Rs.adjoint())).eval();
            }
        }
        c.noise_trend_ratio = j.value("noise_trend_ratio", c.noise_trend_ratio);
        c.snapshots = j.value("snapshots", c.snapshots);
        if (j.contains("snr_db"))
            c.snr_db = j["snr_db"].get<std::vector<double>>();
        c.trials = j.value("trials", c.trials);
        if (j.contains("estimators"))
        {
            c.estimators.clear();
            for (const auto &e : j["estimators"])
                c.estimators.push_back(parse_estimator(e.get<std::string>()));
        }
        c.seed = j.value("seed", c.seed);
        if (j.contains("newton"))
        {
            const auto &n = j["newton"];
            auto &o = c.apn.newton;
            o.max_iters = n.value("max_iters", o.max_iters);
            o.step_tol = n.value("step_tol", o.step_tol);
            o.backtrack_factor = n.value("backtrack_factor", o.backtrack_factor);
            o.min_mu = n.value("min_mu", o.min_mu);
            if (n.contains("hessian_mode"))
                o.hessian_mode = parse_hessian_mode(n["hessian_mode"].get<std::string>());
            o.divergence_ratio = n.value("divergence_ratio", o.divergence_ratio);
            o.lambda_floor = n.value("lambda_floor", o.lambda_floor);
            o.decrement_tol = n.value("decrement_tol", o.decrement_tol);
        }
        c.apn.grid.grid_factor = j.value("grid_factor", c.apn.grid.grid_factor);
        c.apn.max_outer = j.value("max_outer", c.apn.max_outer);
        c.music.grid_factor = j.value("music_grid_factor", c.music.grid_factor);
        c.validate();
        return c;
    }

    inline ScenarioConfig load_config(const std::string &path)
    {
        std::ifstream in(path);
        if (!in)
            throw std::runtime_error("cannot open config '" + path + "'");
        return config_from_json(nlohmann::json::parse(in));
    }

    // ------------------------------------------------------------------------
    // Angle matching.

    // Assignment of estimates to true angles minimising the total squared
    // error, exhaustive over all K! permutations. perm[k] is the estimate
    // index matched to true angle k.
    inline std::vector<Eigen::Index> match_angles(const RVecd &truth, const RVecd &est)
    {
        const Eigen::Index K = truth.size();
        if (est.size() != K)
            throw dimension_error("match_angles: size mismatch");
        if (K > 5)
            throw dimension_error("match_angles: K must be <= 5");
        std::vector<Eigen::Index> perm(static_cast<std::size_t>(K)), best;
        std::iota(perm.begin(), perm.end(), Eigen::Index(0));
        double best_err = std::numeric_limits<double>::infinity();
        do
        {
            double e = 0.0;
            for (Eigen::Index k = 0; k < K; ++k)
            {
                const double d = est(perm[std::size_t(k)]) - truth(k);
                e += d * d;
            }
            if (e < best_err || best.empty())
            {
                best_err = e;
                best = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        return best;
    }

    // Greedy nearest match in true-angle order; reference for tests only.
    inline std::vector<Eigen::Index> greedy_match(const RVecd &truth, const RVecd &est)
    {
        const Eigen::Index K = truth.size();
        std::vector<Eigen::Index> out(static_cast<std::size_t>(K));
        std::vector<bool> used(static_cast<std::size_t>(K), false);
        for (Eigen::Index k = 0; k < K; ++k)
        {
            Eigen::Index best = -1;
            for (Eigen::Index j = 0; j < K; ++j)
                if (!used[std::size_t(j)] &&
                    (best < 0 || std::abs(est(j) - truth(k)) < std::abs(est(best) - truth(k))))
                    best = j;
            used[std::size_t(best)] = true;
            out[std::size_t(k)] = best;
        }
        return out;
    }

    inline double matched_error(const RVecd &truth, const RVecd &est, const std::vector<Eigen::Index> &perm)
    {
        double e = 0.0;
        for (Eigen::Index k = 0; k < truth.size(); ++k)
        {
            const double d = est(perm[std::size_t(k)]) - truth(k);
            e += d * d;
        }
        return e;
    }

    // ------------------------------------------------------------------------
    // Monte Carlo engine.

    struct TrialRecord
    {
        double snr_db = 0.0;
        int snr_index = 0;
        int trial = 0;
        Estimator estimator = Estimator::SML;
        RVecd theta_true;
        RVecd theta_hat;  // matched to theta_true
        RVecd sq_err;
        std::optional<RVecd> lambda_hat;
        int iters_stage1 = 0;
        int iters_stage3 = 0;
        double flops = 0.0;
        bool converged = false;
        bool diverged_lambda = false;
        bool failed = false;
        std::string note;
    };

    struct AggregateRow
    {
        double snr_db = 0.0;
        Estimator estimator = Estimator::SML;
        double mse = 0.0;   // pooled over angles and trials, rad^2
        double rmse = 0.0;
        double mean_iters_stage1 = 0.0;
        double mean_iters_stage3 = 0.0;
        double mean_flops = 0.0;
        double converged_rate = 0.0;
        double diverged_rate = 0.0;
        int failures = 0;
        int trials = 0;
    };

    struct SweepResult
    {
        ScenarioConfig config;
        std::vector<TrialRecord> records; // ordered by (snr, trial, estimator)
        std::vector<AggregateRow> aggregates;

        const AggregateRow &aggregate(double snr, Estimator e) const
        {
            for (const auto &a : aggregates)
                if (a.snr_db == snr && a.estimator == e)
                    return a;
            throw std::out_of_range("no aggregate for requested (snr, estimator)");
        }
    };

    // Runs one estimator on the shared data of a trial.
    inline EstimationResult run_estimator(Estimator e, const SampleCovariance<double> &cov,
                                          const ArrayGeometry &geometry, Eigen::Index K, const ScenarioConfig &c)
    {
        if (e == Estimator::MUSIC)
            return music_as_result(cov.Rz, geometry, K, c.music);
        return apn_estimate(cov, geometry, K, e, c.apn);
    }

    // Data of one (snr, trial) cell: Z synthesised from the stream keyed by
    // (seed, snr index, trial), independent of thread scheduling.
    inline CMatd trial_snapshots(const ScenarioConfig &c, const SourceModel &model, int snr_index, int trial)
    {
        const ArrayGeometry g = c.geometry();
        const RVecd trend = linear_trend(g.size(), c.noise_trend_ratio);
        const RVecd lambda = scale_for_snr(g, c.theta_true, model, trend, c.snr_db[std::size_t(snr_index)]);
        RngStream rng(c.seed, {std::uint64_t(snr_index), std::uint64_t(trial)});
        return synthesize(g, c.theta_true, model, lambda, c.snapshots, rng);
    }

    namespace detail
    {
        // Mean computed on sorted values, so the result does not depend on
        // the order in which trials were produced.
        inline double ordered_mean(std::vector<double> v)
        {
            if (v.empty())
                return std::numeric_limits<double>::quiet_NaN();
            std::sort(v.begin(), v.end());
            double s = 0.0;
            for (double x : v)
                s += x;
            return s / double(v.size());
        }
    } // namespace detail

    inline std::vector<AggregateRow> aggregate(const ScenarioConfig &c, const std::vector<TrialRecord> &records)
    {
        std::vector<AggregateRow> out;
        for (double snr : c.snr_db)
            for (Estimator e : c.estimators)
            {
                AggregateRow a;
                a.snr_db = snr;
                a.estimator = e;
                std::vector<double> se, i1, i3, fl, cv, dv;
                for (const auto &r : records)
                {
                    if (r.snr_db != snr || r.estimator != e)
                        continue;
                    ++a.trials;
                    cv.push_back(r.converged ? 1.0 : 0.0);
                    dv.push_back(r.diverged_lambda ? 1.0 : 0.0);
                    if (r.failed)
                    {
                        ++a.failures;
                        continue;
                    }
                    for (Eigen::Index k = 0; k < r.sq_err.size(); ++k)
                        se.push_back(r.sq_err(k));
                    i1.push_back(r.iters_stage1);
                    i3.push_back(r.iters_stage3);
                    fl.push_back(r.flops);
                }
                a.mse = detail::ordered_mean(se);
                a.rmse = std::sqrt(a.mse);
                a.mean_iters_stage1 = detail::ordered_mean(i1);
                a.mean_iters_stage3 = detail::ordered_mean(i3);
                a.mean_flops = detail::ordered_mean(fl);
                a.converged_rate = detail::ordered_mean(cv);
                a.diverged_rate = detail::ordered_mean(dv);
                out.push_back(a);
            }
        return out;
    }

    // threads <= 0 selects the hardware concurrency.
    inline SweepResult run_monte_carlo(const ScenarioConfig &c, int threads = 1)
    {
        c.validate();
        const ArrayGeometry g = c.geometry();
        const Eigen::Index K = c.sources();
        const SourceModel model = source_model(c);
        const int S = int(c.snr_db.size());
        const int E = int(c.estimators.size());
        const std::size_t cells = std::size_t(S) * std::size_t(c.trials);

        SweepResult res;
        res.config = c;
        res.records.resize(cells * std::size_t(E));

        auto run_cell = [&](std::size_t cell) {
            const int si = int(cell / std::size_t(c.trials));
            const int t = int(cell % std::size_t(c.trials));
            const CMatd Z = trial_snapshots(c, model, si, t);
            const auto cov = SampleCovariance<double>::from_snapshots(Z);
            for (int ei = 0; ei < E; ++ei)
            {
                TrialRecord &r = res.records[cell * std::size_t(E) + std::size_t(ei)];
                r.snr_db = c.snr_db[std::size_t(si)];
                r.snr_index = si;
                r.trial = t;
                r.estimator = c.estimators[std::size_t(ei)];
                r.theta_true = c.theta_true;
                try
                {
                    const EstimationResult er = run_estimator(r.estimator, cov, g, K, c);
                    const auto perm = match_angles(c.theta_true, er.theta_hat);
                    r.theta_hat.resize(K);
                    r.sq_err.resize(K);
                    for (Eigen::Index k = 0; k < K; ++k)
                    {
                        r.theta_hat(k) = er.theta_hat(perm[std::size_t(k)]);
                        const double d = r.theta_hat(k) - c.theta_true(k);
                        r.sq_err(k) = d * d;
                    }
                    r.lambda_hat = er.lambda_hat;
                    r.iters_stage1 = er.iters_stage1;
                    r.iters_stage3 = er.iters_stage3;
                    r.flops = er.flop_estimate;
                    r.converged = er.converged;
                    r.diverged_lambda = er.diverged_lambda;
                    r.note = er.note;
                }
                catch (const std::exception &ex)
                {
                    r.failed = true;
                    r.note = ex.what();
                    r.theta_hat = RVecd::Constant(K, std::numeric_limits<double>::quiet_NaN());
                    r.sq_err = r.theta_hat;
                }
            }
        };

        if (threads <= 0)
            threads = int(std::max(1u, std::thread::hardware_concurrency()));
        threads = int(std::min<std::size_t>(std::size_t(threads), cells));
        if (threads <= 1)
        {
            for (std::size_t cell = 0; cell < cells; ++cell)
                run_cell(cell);
        }
        else
        {
            std::atomic<std::size_t> next{0};
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
            for (int w = 0; w < threads; ++w)
                pool.emplace_back([&, w] {
                    try
                    {
                        for (std::size_t cell; (cell = next.fetch_add(1)) < cells;)
                            run_cell(cell);
                    }
                    catch (...)
                    {
                        errors[std::size_t(w)] = std::current_exception();
                    }
                });
            for (auto &th : pool)
                th.join();
            for (auto &e : errors)
                if (e)
                    std::rethrow_exception(e);
        }
        res.aggregates = aggregate(c, res.records);
        return res;
    }

    // ------------------------------------------------------------------------
    // Output. One row per (trial, angle); aggregate rows carry trial = k = -1.

    struct CsvRow
    {
        double snr_db = 0.0;
        std::string estimator;
        long trial = 0;
        long k_index = 0;
        double theta_true = 0.0;
        double theta_hat = 0.0;
        double sq_err = 0.0;
        double iters_stage1 = 0.0;
        double iters_stage3 = 0.0;
        double flops_est = 0.0;
        double converged = 0.0;
        double diverged_lambda = 0.0;
        bool aggregate() const { return trial < 0; }
    };

    inline const char *csv_columns()
    {
        return "snr_db,estimator,trial,k_index,theta_true,theta_hat,sq_err,iters_stage1,iters_stage3,"
               "flops_est,converged,diverged_lambda,crb";
    }

    inline std::vector<CsvRow> to_rows(const SweepResult &r)
    {
        std::vector<CsvRow> rows;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        for (const auto &t : r.records)
            for (Eigen::Index k = 0; k < t.theta_true.size(); ++k)
            {
                CsvRow row;
                row.snr_db = t.snr_db;
                row.estimator = std::string(estimator_name(t.estimator));
                row.trial = t.trial;
                row.k_index = long(k);
                row.theta_true = t.theta_true(k);
                row.theta_hat = t.theta_hat(k);
                row.sq_err = t.sq_err(k);
                row.iters_stage1 = t.iters_stage1;
                row.iters_stage3 = t.iters_stage3;
                row.flops_est = t.flops;
                row.converged = t.converged ? 1.0 : 0.0;
                row.diverged_lambda = t.diverged_lambda ? 1.0 : 0.0;
                rows.push_back(row);
            }
        for (const auto &a : r.aggregates)
        {
            CsvRow row;
            row.snr_db = a.snr_db;
            row.estimator = std::string(estimator_name(a.estimator));
            row.trial = -1;
            row.k_index = -1;
            row.theta_true = nan;
            row.theta_hat = nan;
            row.sq_err = a.mse;
            row.iters_stage1 = a.mean_iters_stage1;
            row.iters_stage3 = a.mean_iters_stage3;
            row.flops_est = a.mean_flops;
            row.converged = a.converged_rate;
            row.diverged_lambda = a.diverged_rate;
            rows.push_back(row);
        }
        return rows;
    }

    namespace detail
    {
        inline std::string fmt(double v)
        {
            if (std::isnan(v))
                return "";
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return buf;
        }

        inline double parse_double(const std::string &s)
        {
            if (s.empty())
                return std::numeric_limits<double>::quiet_NaN();
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size())
                throw std::invalid_argument("bad number '" + s + "'");
            return v;
        }
    } // namespace detail

    inline void write_header_comments(std::ostream &out, const ScenarioConfig &c)
    {
        out << "# apn sweep, scenario=" << c.name << " seed=" << c.seed << " trials=" << c.trials
            << " snapshots=" << c.snapshots << " sensors=" << c.positions.size() << " sources=" << c.sources()
            << "\n";
        out << "# flops_est: model polynomials, 1 complex multiply-add = 8 real flops; MUSIC not modelled (0)\n";
        out << "# aggregate rows (trial=-1, k_index=-1): sq_err = mean squared angle error in rad^2 pooled over "
               "all angles and trials (RMSE = sqrt), iters/flops = means, converged/diverged_lambda = fractions\n";
        out << "# empty fields are undefined values; crb is reserved and left empty\n";
    }

    inline void write_csv(std::ostream &out, const SweepResult &r)
    {
        write_header_comments(out, r.config);
        out << csv_columns() << "\n";
        for (const auto &row : to_rows(r))
        {
            out << detail::fmt(row.snr_db) << ',' << row.estimator << ',' << row.trial << ',' << row.k_index << ','
                << detail::fmt(row.theta_true) << ',' << detail::fmt(row.theta_hat) << ','
                << detail::fmt(row.sq_err) << ',' << detail::fmt(row.iters_stage1) << ','
                << detail::fmt(row.iters_stage3) << ',' << detail::fmt(row.flops_est) << ','
                << detail::fmt(row.converged) << ',' << detail::fmt(row.diverged_lambda) << ",\n";
        }
    }

    inline std::vector<CsvRow> parse_csv(std::istream &in)
    {
        std::vector<CsvRow> rows;
        std::string line;
        bool header_seen = false;
        while (std::getline(in, line))
        {
            if (line.empty() || line[0] == '#')
                continue;
            if (!header_seen)
            {
                if (line != csv_columns())
                    throw std::runtime_error("parse_csv: unexpected header");
                header_seen = true;
                continue;
            }
            std::vector<std::string> f;
            std::string cell;
            std::stringstream ss(line);
            while (std::getline(ss, cell, ','))
                f.push_back(cell);
            if (!line.empty() && line.back() == ',')
                f.emplace_back();
            if (f.size() != 13)
                throw std::runtime_error("parse_csv: expected 13 fields, got " + std::to_string(f.size()));
            CsvRow r;
            r.snr_db = detail::parse_double(f[0]);
            r.estimator = f[1];
            r.trial = std::stol(f[2]);
            r.k_index = std::stol(f[3]);
            r.theta_true = detail::parse_double(f[4]);
            r.theta_hat = detail::parse_double(f[5]);
            r.sq_err = detail::parse_double(f[6]);
            r.iters_stage1 = detail::parse_double(f[7]);
            r.iters_stage3 = detail::parse_double(f[8]);
            r.flops_est = detail::parse_double(f[9]);
            r.converged = detail::parse_double(f[10]);
            r.diverged_lambda = detail::parse_double(f[11]);
            rows.push_back(r);
        }
        return rows;
    }

    inline nlohmann::json row_to_json(const CsvRow &r)
    {
        auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
        return nlohmann::json{{"snr_db", r.snr_db},
                              {"estimator", r.estimator},
                              {"trial", r.trial},
                              {"k_index", r.k_index},
                              {"theta_true", num(r.theta_true)},
                              {"theta_hat", num(r.theta_hat)},
                              {"sq_err", num(r.sq_err)},
                              {"iters_stage1", num(r.iters_stage1)},
                              {"iters_stage3", num(r.iters_stage3)},
                              {"flops_est", num(r.flops_est)},
                              {"converged", num(r.converged)},
                              {"diverged_lambda", num(r.diverged_lambda)},
                              {"crb", nullptr}};
    }

    inline CsvRow row_from_json(const nlohmann::json &j)
    {
        auto num = [&](const char *k) {
            return j.at(k).is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at(k).get<double>();
        };
        CsvRow r;
        r.snr_db = num("snr_db");
        r.estimator = j.at("estimator").get<std::string>();
        r.trial = j.at("trial").get<long>();
        r.k_index = j.at("k_index").get<long>();
        r.theta_true = num("theta_true");
        r.theta_hat = num("theta_hat");
        r.sq_err = num("sq_err");
        r.iters_stage1 = num("iters_stage1");
        r.iters_stage3 = num("iters_stage3");
        r.flops_est = num("flops_est");
        r.converged = num("converged");
        r.diverged_lambda = num("diverged_lambda");
        return r;
    }

    // First line: metadata object; then one object per row.
    inline void write_jsonl(std::ostream &out, const SweepResult &r)
    {
        const auto &c = r.config;
        nlohmann::json meta{{"meta",
                             {{"scenario", c.name},
                              {"seed", c.seed},
                              {"trials", c.trials},
                              {"snapshots", c.snapshots},
                              {"flops_convention", "1 complex multiply-add = 8 real flops"},
                              {"aggregate_sq_err", "pooled mean squared angle error, rad^2"}}}};
        out << meta.dump() << "\n";
        for (const auto &row : to_rows(r))
            out << row_to_json(row).dump() << "\n";
    }

    inline std::vector<CsvRow> parse_jsonl(std::istream &in)
    {
        std::vector<CsvRow> rows;
        std::string line;
        while (std::getline(in, line))
        {
            if (line.empty())
                continue;
            const auto j = nlohmann::json::parse(line);
            if (j.contains("meta"))
                continue;
            rows.push_back(row_from_json(j));
        }
        return rows;
    }

    // NaN-aware field-by-field equality.
    inline bool same_row(const CsvRow &a, const CsvRow &b)
    {
        auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
        return eq(a.snr_db, b.snr_db) && a.estimator == b.estimator && a.trial == b.trial &&
               a.k_index == b.k_index && eq(a.theta_true, b.theta_true) && eq(a.theta_hat, b.theta_hat) &&
               eq(a.sq_err, b.sq_err) && eq(a.iters_stage1, b.iters_stage1) &&
               eq(a.iters_stage3, b.iters_stage3) && eq(a.flops_est, b.flops_est) &&
               eq(a.converged, b.converged) && eq(a.diverged_lambda, b.diverged_lambda);
    }
} // namespace apn

#endif // APN_HARNESS_HPP
