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

// apn: estimate, simulate, sweep, flops, verify.

#include "apn/apn.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

using namespace apn;

namespace
{
    // Newton / search overrides shared by `estimate` and `sweep`. Only flags
    // given on the command line touch the options.
    struct TuningFlags
    {
        CLI::Option *max_iters_o = nullptr, *step_tol_o = nullptr, *backtrack_o = nullptr, *min_mu_o = nullptr,
                    *hessian_o = nullptr, *floor_o = nullptr, *div_o = nullptr, *dec_o = nullptr,
                    *grid_o = nullptr, *outer_o = nullptr, *music_grid_o = nullptr;
        int max_iters = 0;
        double step_tol = 0, backtrack = 0, min_mu = 0, floor = 0, div = 0, dec = 0;
        std::string hessian;
        Eigen::Index grid = 0, music_grid = 0;
        int outer = 0;

        void attach(CLI::App *app)
        {
            max_iters_o = app->add_option("--max-iters", max_iters, "Newton iterations per run");
            step_tol_o = app->add_option("--step-tol", step_tol, "stop when the Newton step inf-norm is below this");
            backtrack_o = app->add_option("--backtrack-factor", backtrack, "step reduction per rejected trial");
            min_mu_o = app->add_option("--min-mu", min_mu, "smallest step multiplier tried");
            hessian_o = app->add_option("--hessian-mode", hessian, "full | reduced | approx")
                            ->check(CLI::IsMember({"full", "reduced", "approx"}));
            floor_o = app->add_option("--lambda-floor", floor, "largest per-step shrink fraction of lambda");
            div_o = app->add_option("--divergence-ratio", div, "lambda growth flagged as divergence");
            dec_o = app->add_option("--decrement-tol", dec, "relative Newton decrement treated as stationary");
            grid_o = app->add_option("--grid-factor", grid, "line-search grid points per sensor");
            outer_o = app->add_option("--max-outer", outer, "outer sweeps of the alternating variants");
            music_grid_o = app->add_option("--music-grid-factor", music_grid, "MUSIC grid points per sensor");
        }

        void apply(ApnOptions &a, MusicOptions &m) const
        {
            auto &n = a.newton;
            if (*max_iters_o)
                n.max_iters = max_iters;
            if (*step_tol_o)
                n.step_tol = step_tol;
            if (*backtrack_o)
                n.backtrack_factor = backtrack;
            if (*min_mu_o)
                n.min_mu = min_mu;
            if (*hessian_o)
                n.hessian_mode = parse_hessian_mode(hessian);
            if (*floor_o)
                n.lambda_floor = floor;
            if (*div_o)
                n.divergence_ratio = div;
            if (*dec_o)
                n.decrement_tol = dec;
            if (*grid_o)
                a.grid.grid_factor = grid;
            if (*outer_o)
                a.max_outer = outer;
            if (*music_grid_o)
                m.grid_factor = music_grid;
            n.validate();
        }
    };

    int threads_fallback(int flag)
    {
        if (flag > 0)
            return flag;
        if (const char *v = std::getenv("APN_THREADS"))
        {
            const int t = std::atoi(v);
            if (t > 0)
                return t;
        }
        return 1;
    }

    void print_vector(const char *label, const RVecd &v)
    {
        std::printf("%s", label);
        for (Eigen::Index i = 0; i < v.size(); ++i)
            std::printf("%s%.12g", i ? " " : "", v(i));
        std::printf("\n");
    }

    // --- estimate ------------------------------------------------------------

    struct EstimateArgs
    {
        std::string input, config, estimator = "SML";
        std::vector<double> positions;
        Eigen::Index sensors = 0, sources = 0;
        bool trace = false;
        TuningFlags tuning;
    };

    int run_estimate(const EstimateArgs &a)
    {
        const CMatd Z = load_snapshots(a.input);
        ScenarioConfig c = a.config.empty() ? uncorrelated_scenario() : load_config(a.config);
        ArrayGeometry geometry = c.geometry();
        Eigen::Index K = c.sources();
        if (!a.positions.empty())
            geometry = ArrayGeometry(Eigen::Map<const RVecd>(a.positions.data(), Eigen::Index(a.positions.size())));
        else if (a.sensors > 0)
            geometry = ArrayGeometry::ula(a.sensors);
        else if (a.config.empty())
            geometry = ArrayGeometry::ula(Z.rows());
        if (a.sources > 0)
            K = a.sources;
        if (geometry.size() != Z.rows())
            throw dimension_error("estimate: snapshot file has " + std::to_string(Z.rows()) + " sensors, geometry has " +
                                  std::to_string(geometry.size()));
        a.tuning.apply(c.apn, c.music);

        const Estimator e = parse_estimator(a.estimator);
        const auto cov = SampleCovariance<double>::from_snapshots(Z);
        const EstimationResult r = run_estimator(e, cov, geometry, K, c);

        std::printf("estimator %s\nsensors %lld\nsnapshots %lld\nsources %lld\n",
                    std::string(estimator_name(e)).c_str(), (long long)geometry.size(), (long long)Z.cols(),
                    (long long)K);
        print_vector("theta_hat ", r.theta_hat);
        if (r.lambda_hat)
            print_vector("lambda_hat ", *r.lambda_hat);
        std::printf("cost %.12g\niters_stage1 %d\niters_stage3 %d\nflops_est %.0f\n", r.cost, r.iters_stage1,
                    r.iters_stage3, r.flop_estimate);
        std::printf("converged %d\ndiverged_lambda %d\ncollided %d\ninit_fallback %d\npeaks_padded %d\n",
                    int(r.converged), int(r.diverged_lambda), int(r.collided), int(r.init_fallback),
                    int(r.peaks_padded));
        if (!r.note.empty())
            std::printf("note %s\n", r.note.c_str());
        if (a.trace)
            for (const auto &t : r.cost_trace)
                std::printf("trace %d %.15g %.9g\n", t.iteration, t.cost, t.max_lambda);
        return 0;
    }

    // --- simulate ------------------------------------------------------------

    struct SimulateArgs
    {
        std::string config, out;
        std::optional<double> snr;
        std::optional<std::uint64_t> seed;
        int trial = 0;
        bool text = false;
    };

    int run_simulate(const SimulateArgs &a)
    {
        ScenarioConfig c = a.config.empty() ? uncorrelated_scenario() : load_config(a.config);
        if (a.seed)
            c.seed = *a.seed;
        c.snr_db = {a.snr.value_or(c.snr_db.front())};
        if (a.trial < 0)
            throw std::invalid_argument("simulate: trial must be >= 0");
        const SourceModel m = source_model(c);
        const CMatd Z = trial_snapshots(c, m, 0, a.trial);
        const ArrayGeometry g = c.geometry();
        const RVecd lambda = scale_for_snr(g, c.theta_true, m, linear_trend(g.size(), c.noise_trend_ratio),
                                           c.snr_db.front());

        std::printf("scenario %s\nseed %llu\ntrial %d\nsnr_db %.12g\nsensors %lld\nsnapshots %lld\n",
                    c.name.c_str(), (unsigned long long)c.seed, a.trial, c.snr_db.front(), (long long)g.size(),
                    (long long)Z.cols());
        print_vector("theta_true ", c.theta_true);
        print_vector("lambda_true ", lambda);
        if (!a.out.empty())
        {
            save_snapshots(a.out, Z, a.text);
            std::printf("wrote %s (%s)\n", a.out.c_str(), a.text ? "text" : "binary");
        }
        return 0;
    }

    // --- sweep ---------------------------------------------------------------

    struct SweepArgs
    {
        std::string config, estimators, out, format = "csv";
        std::optional<std::uint64_t> seed;
        std::optional<int> trials;
        std::vector<double> snr;
        int threads = 0;
        TuningFlags tuning;
    };

    int run_sweep(const SweepArgs &a)
    {
        ScenarioConfig c = a.config.empty() ? uncorrelated_scenario() : load_config(a.config);
        if (a.seed)
            c.seed = *a.seed;
        if (a.trials)
            c.trials = *a.trials;
        if (!a.snr.empty())
            c.snr_db = a.snr;
        if (!a.estimators.empty())
            c.estimators = parse_estimator_list(a.estimators);
        a.tuning.apply(c.apn, c.music);
        c.validate();

        const SweepResult r = run_monte_carlo(c, threads_fallback(a.threads));
        auto emit = [&](std::ostream &os) {
            if (a.format == "jsonl")
                write_jsonl(os, r);
            else
                write_csv(os, r);
        };
        if (a.out.empty() || a.out == "-")
            emit(std::cout);
        else
        {
            std::ofstream os(a.out, std::ios::binary);
            if (!os)
                throw std::runtime_error("cannot open '" + a.out + "' for writing");
            emit(os);
            if (!os)
                throw std::runtime_error("write to '" + a.out + "' failed");
        }
        return 0;
    }

    // --- verify --------------------------------------------------------------

    int run_verify(int instances, std::uint64_t seed)
    {
        if (instances < 1)
            throw std::invalid_argument("verify: instances must be >= 1");
        const VerificationReport rep = run_verification(instances, seed);
        const auto &w = rep.worst;
        const auto &c = rep.worst_identity;
        std::printf("instances %d seed %llu\n", rep.instances, (unsigned long long)seed);
        std::printf("worst gradient rel err %.3e\nworst hessian rel err %.3e\n", w.worst_gradient(),
                    w.worst_hessian());
        std::printf("P idempotent %.3e\nP hermitian %.3e\ntrace P_z R_zl - K %.3e\nC C^-1 - I %.3e\n",
                    c.p_idempotent, c.p_hermitian, c.trace_pz_rzl, c.c_inverse);
        std::printf("concentration dml %.3e sml %.3e\n", c.dml_concentration, c.sml_concentration);
        for (const auto &f : rep.failures)
            std::printf("FAIL %s\n", f.c_str());
        std::printf("%s\n", rep.passed() ? "PASS" : "FAIL");
        return rep.passed() ? 0 : 1;
    }
} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"APN direction-of-arrival estimation with unknown per-sensor noise powers"};
    app.require_subcommand(1);

    EstimateArgs est;
    auto *e = app.add_subcommand("estimate", "estimate angles and noise profile from a snapshot file");
    e->add_option("--input,-i", est.input, "snapshot file (APND binary or text)")->required()->check(CLI::ExistingFile);
    e->add_option("--config", est.config, "scenario JSON supplying geometry, K and options");
    e->add_option("--sensors,-m", est.sensors, "half-wavelength ULA with this many sensors");
    e->add_option("--positions", est.positions, "sensor positions in half wavelengths")->delimiter(',');
    e->add_option("--sources,-k", est.sources, "number of sources");
    e->add_option("--estimator", est.estimator, "MUSIC, DMLo, DML, DML-alt, SML, SML-alt, SML-red");
    e->add_flag("--trace", est.trace, "print the cost trace");
    est.tuning.attach(e);

    SimulateArgs sim;
    auto *s = app.add_subcommand("simulate", "synthesise one trial and optionally dump the snapshots");
    s->add_option("--config", sim.config, "scenario JSON (default: uncorrelated preset)");
    s->add_option("--snr", sim.snr, "SNR in dB (default: first of the config grid)");
    s->add_option("--seed", sim.seed, "master seed");
    s->add_option("--trial", sim.trial, "trial index");
    s->add_option("--out,-o", sim.out, "snapshot file to write");
    s->add_flag("--text", sim.text, "write the text format instead of binary");

    SweepArgs sw;
    auto *m = app.add_subcommand("sweep", "Monte Carlo sweep, results as CSV or JSON lines");
    m->add_option("--config", sw.config, "scenario JSON (default: uncorrelated preset)");
    m->add_option("--seed", sw.seed, "master seed");
    m->add_option("--trials", sw.trials, "trials per SNR")->check(CLI::PositiveNumber);
    m->add_option("--snr", sw.snr, "SNR grid in dB, comma separated")->delimiter(',');
    m->add_option("--estimators", sw.estimators, "comma separated estimator list");
    m->add_option("--out,-o", sw.out, "output file (default: stdout)");
    m->add_option("--threads", sw.threads, "worker threads (fallback: APN_THREADS, then 1)");
    m->add_option("--format", sw.format, "csv | jsonl")->check(CLI::IsMember({"csv", "jsonl"}));
    sw.tuning.attach(m);

    std::int64_t fm = 0, fk = 0;
    auto *f = app.add_subcommand("flops", "print the four flop polynomials for M sensors, K sources");
    f->add_option("--m", fm, "sensors")->required();
    f->add_option("--k", fk, "sources")->required();

    int vinst = 200;
    std::uint64_t vseed = 1;
    auto *v = app.add_subcommand("verify", "finite-difference and identity checks on random instances");
    v->add_option("--instances", vinst, "number of random instances");
    v->add_option("--seed", vseed, "master seed");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*e)
            return run_estimate(est);
        if (*s)
            return run_simulate(sim);
        if (*m)
            return run_sweep(sw);
        if (*f)
        {
            if (!(fm >= fk && fk >= 1))
                throw std::invalid_argument("flops: need M >= K >= 1");
            const auto p = flop_polynomials(fm, fk);
            std::printf("cost_D %lld\ncost_S %lld\ncost_D_with_derivs %lld\ncost_S_with_derivs %lld\n",
                        (long long)p.cost_D, (long long)p.cost_S, (long long)p.cost_D_with_derivs,
                        (long long)p.cost_S_with_derivs);
            return 0;
        }
        if (*v)
            return run_verify(vinst, vseed);
    }
    catch (const std::exception &ex)
    {
        std::fprintf(stderr, "apn: %s\n", ex.what());
        return 2;
    }
    return 0;
}
