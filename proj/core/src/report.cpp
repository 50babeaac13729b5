#include "longrun/report.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include <json.hpp>

#include "longrun/assumptions.hpp"
#include "longrun/pde.hpp"
#include "longrun/riccati.hpp"
#include "longrun/simulate.hpp"

namespace longrun {

namespace {

using nlohmann::json;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

json check_json(const CheckReport& r) {
    json j;
    j["name"] = r.name;
    j["verdict"] = to_string(r.verdict);
    j["certified"] = r.certified;
    j["summary"] = r.summary;
    json det;
    for (const auto& kv : r.details) det[kv.first] = kv.second;
    j["details"] = det;
    if (r.witness) {
        json w;
        w["quantity"] = r.witness->quantity;
        w["value"] = r.witness->value;
        if (r.witness->x.size() > 0) w["x"] = matrix_json(r.witness->x);
        j["witness"] = w;
    }
    return j;
}

json mc_json(const McEstimate& e) {
    return json{{"mean", e.mean},
                {"standard_error", e.standard_error},
                {"n_paths", e.n_paths},
                {"dt", e.dt}};
}

// ---------------------------------------------------------------------------
// CSV / SVG writers
// ---------------------------------------------------------------------------

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path);
    for (size_t i = 0; i < header.size(); ++i) {
        out << header[i] << (i + 1 < header.size() ? "," : "\n");
    }
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            out << fmt17(row[i]) << (i + 1 < row.size() ? "," : "\n");
        }
    }
}

struct SvgSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

// Minimal polyline plot: axes, four ticks per axis, one colored line per
// series with a text legend.
void write_svg(const std::string& path, const std::string& title,
               const std::string& xlabel, const std::string& ylabel,
               const std::vector<SvgSeries>& series) {
    const int W = 640, H = 420, ML = 70, MR = 20, MT = 40, MB = 50;
    double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
    for (const auto& s : series) {
        for (const auto& p : s.points) {
            x_lo = std::min(x_lo, p.first);
            x_hi = std::max(x_hi, p.first);
            y_lo = std::min(y_lo, p.second);
            y_hi = std::max(y_hi, p.second);
        }
    }
    if (!(x_hi > x_lo)) x_hi = x_lo + 1.0;
    if (!(y_hi > y_lo)) y_hi = y_lo + 1.0;
    const double ypad = 0.05 * (y_hi - y_lo);
    y_lo -= ypad;
    y_hi += ypad;
    auto px = [&](double x) { return ML + (x - x_lo) / (x_hi - x_lo) * (W - ML - MR); };
    auto py = [&](double y) { return H - MB - (y - y_lo) / (y_hi - y_lo) * (H - MT - MB); };
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

    std::ofstream out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
        << "\" height=\"" << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-size=\"14\">" << title << "</text>\n";
    out << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR
        << "\" y2=\"" << H - MB << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\""
        << H - MB << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = x_lo + t * (x_hi - x_lo) / 4.0;
        const double yv = y_lo + t * (y_hi - y_lo) / 4.0;
        out << "<text x=\"" << px(xv) << "\" y=\"" << H - MB + 18
            << "\" text-anchor=\"middle\" font-size=\"10\">" << std::setprecision(4)
            << xv << "</text>\n";
        out << "<text x=\"" << ML - 8 << "\" y=\"" << py(yv) + 4
            << "\" text-anchor=\"end\" font-size=\"10\">" << std::setprecision(4)
            << yv << "</text>\n";
    }
    out << "<text x=\"" << W / 2 << "\" y=\"" << H - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">" << xlabel << "</text>\n";
    out << "<text x=\"16\" y=\"" << H / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
        << H / 2 << ")\">" << ylabel << "</text>\n";
    for (size_t k = 0; k < series.size(); ++k) {
        out << "<polyline fill=\"none\" stroke=\"" << colors[k % 5]
            << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& p : series[k].points) {
            out << px(p.first) << "," << py(p.second) << " ";
        }
        out << "\"/>\n";
        out << "<text x=\"" << W - MR - 6 << "\" y=\"" << MT + 16 + 16 * k
            << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << colors[k % 5]
            << "\">" << series[k].label << "</text>\n";
    }
    out << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Task runners
// ---------------------------------------------------------------------------

struct EngineState {
    std::optional<RiccatiSolution> riccati;
    std::optional<HorizonRiccatiPath> horizon;
    std::vector<std::vector<double>> riccati_rows;     // T, ||M - Mhat||, m
    std::vector<HDiagnosticsRow> h_rows;
    std::vector<LongrunConvergenceRow> mc_rows;
    std::vector<std::pair<std::string, const ValueSurface*>> surfaces;
    std::vector<ValueSurface> surface_storage;
};

Eigen::MatrixXd wishart_mean_ode(const Eigen::MatrixXd& LLt, const Eigen::MatrixXd& K,
                                 const Eigen::MatrixXd& x0, double T) {
    Eigen::MatrixXd E = x0;
    const int n = std::max(1000, static_cast<int>(T * 2000));
    const double h = T / n;
    auto f = [&](const Eigen::MatrixXd& e) -> Eigen::MatrixXd {
        return LLt + K * e + e * K.transpose();
    };
    for (int k = 0; k < n; ++k) {
        const Eigen::MatrixXd k1 = f(E);
        const Eigen::MatrixXd k2 = f(E + 0.5 * h * k1);
        const Eigen::MatrixXd k3 = f(E + 0.5 * h * k2);
        const Eigen::MatrixXd k4 = f(E + h * k3);
        E += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return E;
}

bool run_check_task(const Scenario& sc, const ModelSpec& spec, json& report) {
    std::vector<CheckReport> checks = run_all_checks(spec, sc.strict_correlation);
    json arr = json::array();
    bool all = true;
    for (const auto& c : checks) {
        arr.push_back(check_json(c));
        all = all && c.passed();
    }
    report["checks"] = arr;
    return all;
}

bool run_riccati_task(const Scenario& sc, const ModelSpec& spec, EngineState& st,
                      json& report) {
    RiccatiSolution sol = solve_ergodic_riccati(spec);
    HorizonRiccatiPath path = solve_horizon_riccati_ode(spec, sc.riccati.T, sc.riccati.dt);
    json j;
    j["lambdaHat"] = sol.lambda_hat;
    j["Mhat"] = matrix_json(sol.Mhat);
    j["residual_norm"] = sol.residual_norm;
    j["closed_loop"] = matrix_json(sol.closed_loop);
    j["stability_margin"] = sol.stability_margin;
    j["hurwitz_margin"] = sol.hurwitz_margin;
    j["newton_iterations"] = sol.newton_iterations;
    j["horizon_T"] = sc.riccati.T;
    j["M_final"] = matrix_json(path.M_final());
    j["M_distance_final"] = (path.M_final() - sol.Mhat).norm();
    j["growth_final"] = path.m_at(sc.riccati.T) - path.m_at(sc.riccati.T - 1.0);
    j["ode_step_error_estimate"] = path.step_error_estimate;
    report["riccati"] = j;

    const int stride = std::max<int>(1, static_cast<int>(path.times.size() / 200));
    for (size_t k = 0; k < path.times.size(); k += stride) {
        st.riccati_rows.push_back(
            {path.times[k], (path.M[k] - sol.Mhat).norm(), path.m[k]});
    }
    st.riccati = std::move(sol);
    st.horizon = std::move(path);
    return report["riccati"]["residual_norm"].get<double>() <= 1e-10 &&
           st.riccati->hurwitz_margin > 0.0;
}

bool run_pde_task(const Scenario& sc, const ModelSpec& spec, EngineState& st,
                  json& report) {
    std::shared_ptr<const Grid> grid;
    if (sc.pde.mode == "d1") {
        grid = Grid::make_d1(sc.pde.x_min, sc.pde.x_max, sc.pde.nx);
    } else {
        grid = Grid::make_d2(sc.pde.x_min, sc.pde.x_max, sc.pde.nx, sc.pde.nz,
                             sc.pde.nc, sc.pde.c_max);
    }
    const double delta = sc.pde.T >= 2.0 ? 1.0 : 0.5 * sc.pde.T;
    CauchyOptions opt;
    opt.T = sc.pde.T;
    opt.dt = sc.pde.dt;
    opt.snapshot_times = sc.pde.snapshots;
    opt.snapshot_times.push_back(sc.pde.T - delta);
    CauchyResult res = solve_cauchy(spec, grid, opt);

    const int ref = grid->nearest_node(sc.sim.x0 *
                                       Eigen::MatrixXd::Identity(spec.dim(), spec.dim()));
    const ValueSurface* at_T = &res.snapshots.back();
    const ValueSurface* at_Tm1 = nullptr;
    for (const auto& s : res.snapshots) {
        if (std::abs(s.T - (sc.pde.T - delta)) < 1e-9) at_Tm1 = &s;
    }
    ErgodicPairEstimate ergodic = extract_ergodic(*at_Tm1, *at_T, ref);

    json j;
    j["T"] = sc.pde.T;
    j["dt_used"] = res.dt_used;
    j["preflight_dt_bound"] = res.preflight_dt_bound;
    j["halvings"] = res.halvings;
    j["master_check_passed"] = res.master_check_passed;
    j["lambda"] = ergodic.lambda;
    j["ref_node"] = ergodic.ref_node;

    DiagnosticBox box;
    box.x_lo = box.z_lo = sc.pde.box_lo;
    box.x_hi = box.z_hi = sc.pde.box_hi;
    box.c_abs = sc.pde.box_c;

    std::vector<ValueSurface> diag_surfaces;
    for (const auto& s : res.snapshots) {
        const bool requested = std::any_of(
            sc.pde.snapshots.begin(), sc.pde.snapshots.end(),
            [&](double t) { return std::abs(t - s.T) < 1e-9; });
        if (requested) diag_surfaces.push_back(s);
    }
    if (!diag_surfaces.empty()) {
        st.h_rows = compute_h(spec, diag_surfaces, ergodic, box);
        json hj = json::array();
        for (const auto& row : st.h_rows) {
            hj.push_back(json{{"T", row.T},
                              {"h_oscillation", row.h_oscillation},
                              {"grad_h_sup", row.grad_h_sup},
                              {"policy_distance", row.policy_distance}});
        }
        j["h_diagnostics"] = hj;
    }
    if (sc.pde.mode == "d2") {
        j["c_curvature_max"] = max_c_curvature(*grid, ergodic.vhat, box);
    }

    bool pass = true;
    if (st.riccati) {
        const double gap = std::abs(ergodic.lambda - st.riccati->lambda_hat);
        j["lambda_gap_to_riccati"] = gap;
        pass = gap <= 1e-3;
    }
    report["pde"] = j;

    st.surface_storage.push_back(*at_T);
    st.surfaces.emplace_back("surface_final", &st.surface_storage.back());
    return pass;
}

bool run_simulate_task(const Scenario& sc, const ModelSpec& spec, EngineState& st,
                       json& report, int threads) {
    json j;
    bool pass = true;
    const SpdMatrix x0 = SpdMatrix::from_dense(
        sc.sim.x0 * Eigen::MatrixXd::Identity(spec.dim(), spec.dim()));

    // Trace-moment agreement against the mean ODE.
    {
        std::vector<double> traces(sc.sim.n_paths);
        for (long i = 0; i < sc.sim.n_paths; ++i) {
            RngStream stream(sc.sim.master_seed, static_cast<std::uint64_t>(i));
            PathBundle path = simulate_state(spec, x0, sc.sim.T, sc.sim.dt, stream);
            traces[i] = path.X.back().trace();
        }
        McEstimate est = mc_estimate(traces, sc.sim.dt);
        const auto* w = spec.wishart();
        const Eigen::MatrixXd expected = wishart_mean_ode(
            w->L * w->L.transpose(), w->K, x0.dense(), sc.sim.T);
        const double gap = std::abs(est.mean - expected.trace());
        j["trace_moment"] = mc_json(est);
        j["trace_moment_expected"] = expected.trace();
        j["trace_moment_pass"] = gap <= 3.0 * est.standard_error;
        pass = pass && (gap <= 3.0 * est.standard_error);
    }

    if (st.riccati && st.horizon) {
        DualityReport dual = mc_duality(spec, x0, sc.sim.T, sc.sim.n_paths,
                                        sc.sim.dt, sc.sim.master_seed, *st.horizon,
                                        threads);
        j["duality"] = json{{"wealth_side", mc_json(dual.wealth_side)},
                            {"deflator_side", mc_json(dual.deflator_side)},
                            {"v_reference", dual.v_reference},
                            {"wealth_gap_in_se", dual.wealth_gap_in_se},
                            {"deflator_gap_in_se", dual.deflator_gap_in_se},
                            {"pass", dual.pass}};
        pass = pass && dual.pass;

        const Eigen::MatrixXd mhat = st.riccati->Mhat;
        GradMap grad = [mhat](double, const Eigen::MatrixXd&) { return mhat; };
        const ModelSpec* spec_ptr = &spec;
        PolicyMap pol = [mhat, spec_ptr](double, const Eigen::MatrixXd& x) {
            return affine_policy(*spec_ptr, mhat, SpdMatrix::from_dense(x));
        };
        OneSidedMcReport sm = mc_supermartingale_deflation(
            spec, x0, sc.sim.T, sc.sim.n_paths, sc.sim.dt, sc.sim.master_seed + 1,
            grad, pol, 1.0, threads);
        j["supermartingale"] = json{{"value", mc_json(sm.value)},
                                    {"bound", sm.bound},
                                    {"pass", sm.pass}};
        pass = pass && sm.pass;

        PolicyMap perturbed = [mhat, spec_ptr](double, const Eigen::MatrixXd& x) {
            Eigen::VectorXd pi =
                affine_policy(*spec_ptr, mhat, SpdMatrix::from_dense(x));
            pi.array() += 0.15;
            return pi;
        };
        OneSidedMcReport nm =
            mc_numeraire(spec, x0, sc.sim.T, sc.sim.n_paths, sc.sim.dt,
                         sc.sim.master_seed + 2, mhat, perturbed, threads);
        j["numeraire"] = json{{"value", mc_json(nm.value)},
                              {"bound", nm.bound},
                              {"pass", nm.pass}};
        pass = pass && nm.pass;

        st.mc_rows = mc_longrun_convergence(
            spec, x0, sc.sim.t_window, sc.sim.T_list, sc.sim.n_paths, sc.sim.dt,
            sc.sim.master_seed + 3, *st.horizon, st.riccati->Mhat, threads);
        json rows = json::array();
        bool decreasing = true;
        for (size_t k = 0; k < st.mc_rows.size(); ++k) {
            rows.push_back(json{{"T", st.mc_rows[k].horizon},
                                {"sup_ratio_deviation",
                                 mc_json(st.mc_rows[k].sup_ratio_deviation)},
                                {"strategy_distance",
                                 mc_json(st.mc_rows[k].strategy_distance)}});
            if (k > 0) {
                // strictly decreasing; identically-zero metrics (policies
                // coincide, e.g. rho = 0) count as converged
                auto ok = [](double prev, double next) {
                    return next < prev || (next == 0.0 && prev == 0.0);
                };
                decreasing = decreasing &&
                             ok(st.mc_rows[k - 1].sup_ratio_deviation.mean,
                                st.mc_rows[k].sup_ratio_deviation.mean) &&
                             ok(st.mc_rows[k - 1].strategy_distance.mean,
                                st.mc_rows[k].strategy_distance.mean);
            }
        }
        j["longrun_convergence"] = rows;
        j["longrun_convergence_decreasing"] = decreasing;
        pass = pass && decreasing;
    }

    report["simulate"] = j;
    return pass;
}

bool run_counterexample_task(const Scenario&, const ModelSpec& spec, json& report) {
    CounterexampleReport rep = counterexample_search(spec);
    json j;
    j["min_residual"] = rep.min_residual;
    j["best_M"] = matrix_json(rep.best_M);
    j["coefficients"] = json{{"x", rep.cx}, {"y", rep.cy}, {"z", rep.cz},
                             {"y2_over_x", rep.cy2x}, {"constant", rep.c0}};
    j["chain_witness"] = rep.chain;
    j["witness_z_coefficient"] = rep.witness_z_coeff;
    j["n_starts"] = rep.n_starts;
    j["seed"] = rep.seed;
    report["counterexample"] = j;
    // threshold as asserted by the operation contract
    return rep.min_residual > 1e-3;
}

void run_report_task(const Scenario& sc, const EngineState& st,
                     const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (!st.riccati_rows.empty()) {
        write_csv(out_dir + "/riccati_path.csv", {"T", "M_distance", "m"},
                  st.riccati_rows);
        SvgSeries s;
        s.label = "||M(T) - Mhat||";
        for (const auto& row : st.riccati_rows) s.points.push_back({row[0], row[1]});
        write_svg(out_dir + "/riccati_convergence.svg",
                  "Finite-horizon Riccati convergence", "T", "distance", {s});
    }
    if (!st.h_rows.empty()) {
        std::vector<std::vector<double>> rows;
        for (const auto& r : st.h_rows) {
            rows.push_back({r.T, r.h_oscillation, r.grad_h_sup, r.policy_distance});
        }
        write_csv(out_dir + "/h_diagnostics.csv",
                  {"T", "h_oscillation", "grad_h_sup", "policy_distance"}, rows);
        SvgSeries grad{"sup ||grad h||", {}}, pol{"sup |pi - pihat|", {}};
        for (const auto& r : st.h_rows) {
            grad.points.push_back({r.T, r.grad_h_sup});
            pol.points.push_back({r.T, r.policy_distance});
        }
        write_svg(out_dir + "/h_diagnostics.svg", "Long-horizon diagnostics", "T",
                  "sup over box", {grad, pol});
    }
    if (!st.mc_rows.empty()) {
        std::vector<std::vector<double>> rows;
        SvgSeries ratio{"E[sup |W^T/What - 1|]", {}}, dist{"E[int policy dist]", {}};
        for (const auto& r : st.mc_rows) {
            rows.push_back({r.horizon, r.sup_ratio_deviation.mean,
                            r.sup_ratio_deviation.standard_error,
                            r.strategy_distance.mean,
                            r.strategy_distance.standard_error});
            ratio.points.push_back({r.horizon, r.sup_ratio_deviation.mean});
            dist.points.push_back({r.horizon, r.strategy_distance.mean});
        }
        write_csv(out_dir + "/mc_convergence.csv",
                  {"T", "sup_ratio_mean", "sup_ratio_se", "strategy_distance_mean",
                   "strategy_distance_se"},
                  rows);
        write_svg(out_dir + "/mc_convergence.svg", "Horizon convergence (MC)", "T",
                  "metric", {ratio, dist});
    }
    for (const auto& [name, surf] : st.surfaces) {
        const Grid& grid = *surf->grid;
        const auto grads = surface_gradients(grid, surf->values);
        std::vector<std::string> header;
        std::vector<std::vector<double>> rows;
        if (grid.mode() == Grid::Mode::d1) {
            header = {"x", "value", "grad_11"};
            for (int idx = 0; idx < grid.n_nodes(); ++idx) {
                rows.push_back({grid.node_matrix(idx)(0, 0), surf->values(idx),
                                grads[idx](0, 0)});
            }
        } else {
            header = {"x", "z", "c", "value", "grad_11", "grad_12", "grad_22"};
            for (int idx = 0; idx < grid.n_nodes(); ++idx) {
                const Eigen::MatrixXd X = grid.node_matrix(idx);
                const double s = std::sqrt(X(0, 0)), t = std::sqrt(X(1, 1));
                rows.push_back({X(0, 0), X(1, 1), X(0, 1) / (s * t),
                                surf->values(idx), grads[idx](0, 0),
                                grads[idx](0, 1), grads[idx](1, 1)});
            }
        }
        write_csv(out_dir + "/" + name + ".csv", header, rows);
    }
    (void)sc;
}

}  // namespace

RunOutcome run_scenario(const Scenario& scenario_in, const RunOptions& options) {
    namespace fs = std::filesystem;
    Scenario scenario = scenario_in;
    if (options.seed_override) scenario.sim.master_seed = *options.seed_override;

    fs::create_directories(options.out_dir);
    json report;
    char hash_buf[24];
    std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                  static_cast<unsigned long long>(scenario_hash(scenario)));
    report["provenance"] = json{{"scenario_hash", hash_buf},
                                {"master_seed", scenario.sim.master_seed},
                                {"version", "0.1.0"}};
    report["scenario_toml"] = scenario.canonical_toml();
    report["tasks"] = scenario.tasks;
    if (options.stamp_time) {
        const auto now = std::chrono::system_clock::now();
        report["timestamp"] =
            static_cast<long>(std::chrono::duration_cast<std::chrono::seconds>(
                                  now.time_since_epoch())
                                  .count());
    }

    RunOutcome outcome;
    EngineState st;
    json task_pass;
    bool all_pass = true;
    try {
        const ModelSpec spec = scenario.build_spec();
        for (const std::string& task : scenario.tasks) {
            bool ok = true;
            if (task == "check") {
                ok = run_check_task(scenario, spec, report);
            } else if (task == "riccati") {
                ok = run_riccati_task(scenario, spec, st, report);
            } else if (task == "pde") {
                ok = run_pde_task(scenario, spec, st, report);
            } else if (task == "simulate") {
                ok = run_simulate_task(scenario, spec, st, report, options.threads);
            } else if (task == "counterexample") {
                ok = run_counterexample_task(scenario, spec, report);
            } else if (task == "report") {
                run_report_task(scenario, st, options.out_dir);
            }
            task_pass[task] = ok;
            all_pass = all_pass && ok;
        }
        outcome.exit_code = all_pass ? 0 : 1;
    } catch (const std::invalid_argument& e) {
        report["error"] = json{{"kind", "precondition"}, {"what", e.what()}};
        outcome.exit_code = 3;
        outcome.message = e.what();
    } catch (const std::runtime_error& e) {
        report["error"] = json{{"kind", "numerical"}, {"what", e.what()}};
        outcome.exit_code = 4;
        outcome.message = e.what();
    }
    report["task_pass"] = task_pass;
    report["all_passed"] = all_pass && outcome.exit_code == 0;

    outcome.report_json = report.dump(2);
    std::ofstream out(options.out_dir + "/report.json");
    out << outcome.report_json << "\n";
    return outcome;
}

}  // namespace longrun
