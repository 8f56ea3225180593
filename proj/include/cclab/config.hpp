#pragma once

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cclab/coupled.hpp"
#include "cclab/errors.hpp"
#include "cclab/halfcont.hpp"
#include "cclab/lichnerowicz.hpp"

namespace cclab {

// ---------------------------------------------------------------------------
// key = value configuration files with [section] headers and '#' comments.
// ---------------------------------------------------------------------------

namespace detail {

struct RawValue {
    std::string value;
    int line = 0;
    mutable bool used = false;
};

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Raw parse of a key=value config: sections, keys, values, line numbers.
class RawConfig {
public:
    explicit RawConfig(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        std::string section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = detail::trim(line);
            if (s.empty() || s[0] == '#') continue;
            if (s.front() == '[') {
                if (s.back() != ']' || s.size() < 3)
                    throw ParseError("line " + std::to_string(lineno) +
                                     ": malformed section header '" + s + "'");
                section = detail::trim(s.substr(1, s.size() - 2));
                if (section.empty())
                    throw ParseError("line " + std::to_string(lineno) + ": empty section name");
                sections_[section];  // materialize even if empty
                continue;
            }
            std::size_t eq = s.find('=');
            if (eq == std::string::npos)
                throw ParseError("line " + std::to_string(lineno) +
                                 ": expected 'key = value', got '" + s + "'");
            std::string key = detail::trim(s.substr(0, eq));
            std::string value = detail::trim(s.substr(eq + 1));
            if (key.empty())
                throw ParseError("line " + std::to_string(lineno) + ": empty key");
            if (section.empty())
                throw ParseError("line " + std::to_string(lineno) +
                                 ": key '" + key + "' outside any [section]");
            auto [it, inserted] = sections_[section].emplace(
                key, detail::RawValue{value, lineno, false});
            if (!inserted)
                throw ParseError("line " + std::to_string(lineno) + ": duplicate key '" + key +
                                 "' in [" + section + "], first defined at line " +
                                 std::to_string(it->second.line));
        }
    }

    const detail::RawValue* find(const std::string& section, const std::string& key) const {
        auto s = sections_.find(section);
        if (s == sections_.end()) return nullptr;
        auto k = s->second.find(key);
        if (k == s->second.end()) return nullptr;
        k->second.used = true;
        return &k->second;
    }

    /// Every key must have been consumed by the schema.
    void check_all_used() const {
        for (const auto& [sec, keys] : sections_)
            for (const auto& [key, rv] : keys)
                if (!rv.used)
                    throw UnknownKey("unknown key '" + key + "' in [" + sec + "] (line " +
                                     std::to_string(rv.line) + ")");
    }

private:
    std::map<std::string, std::map<std::string, detail::RawValue>> sections_;
};

namespace detail {

/// Typed, default-materializing reader on top of RawConfig. Every resolved
/// value (default or explicit) is recorded for the run-log echo.
class ConfigReader {
public:
    explicit ConfigReader(const std::string& text) : raw_(text) {}

    std::string get_string(const std::string& sec, const std::string& key,
                           const std::string& def) {
        const RawValue* rv = raw_.find(sec, key);
        std::string v = rv ? rv->value : def;
        record(sec, key, v);
        return v;
    }

    double get_double(const std::string& sec, const std::string& key, double def) {
        const RawValue* rv = raw_.find(sec, key);
        double v = def;
        if (rv) v = to_double(sec, key, rv->value);
        record(sec, key, num(v));
        return v;
    }

    int get_int(const std::string& sec, const std::string& key, int def) {
        const RawValue* rv = raw_.find(sec, key);
        int v = def;
        if (rv) {
            double d = to_double(sec, key, rv->value);
            v = static_cast<int>(d);
            if (static_cast<double>(v) != d)
                throw RangeError("key '" + key + "' in [" + sec + "]: expected an integer");
        }
        record(sec, key, std::to_string(v));
        return v;
    }

    bool get_bool(const std::string& sec, const std::string& key, bool def) {
        const RawValue* rv = raw_.find(sec, key);
        bool v = def;
        if (rv) {
            if (rv->value == "true" || rv->value == "1") v = true;
            else if (rv->value == "false" || rv->value == "0") v = false;
            else throw RangeError("key '" + key + "' in [" + sec + "]: expected true/false");
        }
        record(sec, key, v ? "true" : "false");
        return v;
    }

    std::vector<double> get_list(const std::string& sec, const std::string& key,
                                 const std::vector<double>& def) {
        const RawValue* rv = raw_.find(sec, key);
        std::vector<double> v = def;
        if (rv) {
            v.clear();
            std::string item;
            std::istringstream in(rv->value);
            while (std::getline(in, item, ',')) {
                item = trim(item);
                if (item.empty()) continue;
                v.push_back(to_double(sec, key, item));
            }
        }
        std::string joined;
        for (std::size_t i = 0; i < v.size(); ++i)
            joined += (i ? "," : "") + num(v[i]);
        record(sec, key, joined);
        return v;
    }

    void finish() const { raw_.check_all_used(); }

    /// Canonical echo of every resolved key (defaults included).
    std::string echo() const {
        std::string out;
        std::string current;
        for (const auto& [sec, key, val] : resolved_) {
            if (sec != current) {
                if (!out.empty()) out += "\n";
                out += "[" + sec + "]\n";
                current = sec;
            }
            out += key + " = " + val + "\n";
        }
        return out;
    }

private:
    static double to_double(const std::string& sec, const std::string& key,
                            const std::string& s) {
        try {
            std::size_t pos = 0;
            double v = std::stod(s, &pos);
            if (pos != s.size())
                throw RangeError("key '" + key + "' in [" + sec + "]: trailing characters in '" +
                                 s + "'");
            return v;
        } catch (const std::invalid_argument&) {
            throw RangeError("key '" + key + "' in [" + sec + "]: '" + s + "' is not a number");
        } catch (const std::out_of_range&) {
            throw RangeError("key '" + key + "' in [" + sec + "]: '" + s + "' is out of range");
        }
    }

    static std::string num(double v) {
        char buf[40];
        auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip
        return std::string(buf, end);
    }

    void record(const std::string& sec, const std::string& key, const std::string& val) {
        resolved_.emplace_back(sec, key, val);
    }

    RawConfig raw_;
    std::vector<std::tuple<std::string, std::string, std::string>> resolved_;
};

}  // namespace detail

/// Fully validated run description with all defaults materialized.
struct RunConfig {
    // geometry
    std::string family;  // flat | warped
    int n = 3;
    int num_points = 256;
    int order = 2;
    double amp_a = 0.3, amp_b0 = 0.2, amp_b1 = 0.25;
    double curvature_shift = 0.5;
    bool positivize = true;
    // tau
    std::string tau_kind;  // designed | constant | expcos
    TauLayout layout;
    double tau_value = 0.7;
    double lambda = 0.5;
    // sigma
    bool sigma_zero = false;
    double s0 = 0.0;
    std::vector<double> offdiag;
    double free_diag_amp = 0.0;
    // experiment
    std::string mode;
    double a = 3.0, t = 1.0, k = 0.0;
    double tol = 1e-8;
    double k_max = 1e5;
    int k_steps = 60;
    std::vector<double> k_grid;
    double eps_c_rel = 0.35;
    std::string example = "quadratic";
    double schaefer_a = 2.0;
    unsigned seed = 12345;
    int threads = 0;  // 0 = auto; current modules are sequential
    double w_const = 1.0, w_amp = 0.0;
    // output
    std::string out_dir = ".";
    bool csv = true;

    std::string echo;  // resolved config, defaults included
};

/// Parses and validates a config. `mode_override` is the CLI subcommand; when
/// both it and the [experiment] mode key are present they must agree.
inline RunConfig parse_config(const std::string& text, const std::string& mode_override = "") {
    detail::ConfigReader r(text);
    RunConfig c;

    c.family = r.get_string("geometry", "family", "warped");
    if (c.family != "flat" && c.family != "warped")
        throw RangeError("geometry.family must be 'flat' or 'warped'");
    c.n = r.get_int("geometry", "n", 3);
    if (c.n < 3) throw RangeError("geometry.n must be >= 3");
    if (c.family == "warped" && c.n != 3)
        throw RangeError("geometry.family = warped requires n = 3");
    c.num_points = r.get_int("geometry", "num_points", 256);
    if (c.num_points < 16) throw RangeError("geometry.num_points must be >= 16");
    c.order = r.get_int("geometry", "order", 2);
    if (c.order != 2 && c.order != 4) throw RangeError("geometry.order must be 2 or 4");
    c.amp_a = r.get_double("geometry", "amp_a", 0.3);
    c.amp_b0 = r.get_double("geometry", "amp_b0", 0.2);
    c.amp_b1 = r.get_double("geometry", "amp_b1", 0.25);
    if (std::abs(c.amp_a) >= 1.0 || std::abs(c.amp_b0) >= 1.0 || std::abs(c.amp_b1) >= 1.2)
        throw RangeError("geometry warp amplitudes leave the metric profiles positive-definite");
    c.curvature_shift = r.get_double("geometry", "curvature_shift", c.family == "flat" ? 1.0 : 0.5);
    c.positivize = r.get_bool("geometry", "positivize", c.family == "warped");

    c.tau_kind = r.get_string("tau", "kind", "designed");
    if (c.tau_kind != "designed" && c.tau_kind != "constant" && c.tau_kind != "expcos")
        throw RangeError("tau.kind must be 'designed', 'constant' or 'expcos'");
    c.layout.tau_min = r.get_double("tau", "tau_min", 0.05);
    c.layout.tau_max = r.get_double("tau", "tau_max", 0.9);
    c.layout.x_up = r.get_double("tau", "x_up", c.layout.x_up);
    c.layout.x_down = r.get_double("tau", "x_down", c.layout.x_down);
    c.layout.half_width = r.get_double("tau", "half_width", 0.5);
    c.layout.ell0 = r.get_double("tau", "ell0", 0.4);
    c.layout.taper = r.get_double("tau", "taper", 0.9);
    c.tau_value = r.get_double("tau", "value", 0.7);
    if (!(c.tau_value > 0.0)) throw RangeError("tau.value must be positive");
    c.lambda = r.get_double("tau", "lambda", 0.5);

    c.sigma_zero = r.get_bool("sigma", "zero", false);
    c.s0 = r.get_double("sigma", "s0", 0.0);
    c.offdiag = r.get_list("sigma", "offdiag", {0.1, -0.03});
    c.free_diag_amp = r.get_double("sigma", "free_diag_amp", 0.0);

    c.mode = r.get_string("experiment", "mode", mode_override);
    if (c.mode.empty()) throw RangeError("experiment.mode is required");
    if (!mode_override.empty() && c.mode != mode_override)
        throw RangeError("experiment.mode '" + c.mode + "' contradicts the subcommand '" +
                         mode_override + "'");
    {
        static const char* known[] = {"lichnerowicz",      "coupled",       "k-sweep",
                                      "two-solutions",     "tau-admissibility",
                                      "halfcont-demo",     "geom-check"};
        bool ok = false;
        for (const char* k : known) ok = ok || c.mode == k;
        if (!ok) throw RangeError("experiment.mode '" + c.mode + "' is not a known mode");
    }
    c.a = r.get_double("experiment", "a", 3.0);
    if (c.a < 1.0) throw RangeError("experiment.a must be >= 1");
    c.t = r.get_double("experiment", "t", 1.0);
    if (!(c.t > 0.0) || c.t > 1.0) throw RangeError("experiment.t must lie in (0,1]");
    c.k = r.get_double("experiment", "k", 0.0);
    if (c.k < 0.0) throw RangeError("experiment.k must be >= 0");
    c.tol = r.get_double("experiment", "tol", 1e-8);
    if (!(c.tol > 0.0)) throw RangeError("experiment.tol must be positive");
    c.k_max = r.get_double("experiment", "k_max", 1e5);
    if (!(c.k_max > 0.0)) throw RangeError("experiment.k_max must be positive");
    c.k_steps = r.get_int("experiment", "k_steps", 60);
    if (c.k_steps < 2) throw RangeError("experiment.k_steps must be >= 2");
    c.k_grid = r.get_list("experiment", "k_grid", {});
    c.eps_c_rel = r.get_double("experiment", "eps_c_rel", 0.35);
    if (c.eps_c_rel < 0.0 || c.eps_c_rel >= 1.0)
        throw RangeError("experiment.eps_c_rel must lie in [0,1)");
    c.example = r.get_string("experiment", "example", "quadratic");
    c.schaefer_a = r.get_double("experiment", "schaefer_a", 2.0);
    {
        int s = r.get_int("experiment", "seed", 12345);
        if (s < 0) throw RangeError("experiment.seed must be >= 0");
        c.seed = static_cast<unsigned>(s);
    }
    c.threads = r.get_int("experiment", "threads", 0);
    if (c.threads < 0) throw RangeError("experiment.threads must be >= 0");
    c.w_const = r.get_double("experiment", "w_const", 1.0);
    c.w_amp = r.get_double("experiment", "w_amp", 0.0);

    c.out_dir = r.get_string("output", "directory", ".");
    c.csv = r.get_bool("output", "csv", true);

    r.finish();
    c.echo = r.echo();
    return c;
}

// ---------------------------------------------------------------------------
// Experiment assembly
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12e", v);
    return buf;
}

inline ReducedGeometry build_geometry(const RunConfig& c) {
    Grid grid(c.num_points, 2.0 * std::numbers::pi, c.order);
    const ScalarField x = grid.coords();
    ReducedGeometry geom = [&]() -> ReducedGeometry {
        if (c.family == "flat")
            return ReducedGeometry(c.n, grid, ScalarField::Ones(c.num_points),
                                   std::vector<ScalarField>(c.n - 1,
                                                            ScalarField::Ones(c.num_points)),
                                   c.curvature_shift);
        ScalarField A = 1.0 + c.amp_a * x.sin();
        std::vector<ScalarField> B = {1.0 + c.amp_b0 * x.cos(),
                                      1.2 + c.amp_b1 * (2.0 * x).sin()};
        return ReducedGeometry(3, grid, A, B, c.curvature_shift);
    }();
    if (c.positivize) return positivize(geom).geom_hat;
    return geom;
}

inline ScalarField build_tau(const RunConfig& c, const Grid& grid) {
    if (c.tau_kind == "constant")
        return ScalarField::Constant(grid.num_points, c.tau_value);
    if (c.tau_kind == "expcos") return (c.lambda * grid.coords().cos()).exp();
    return design_admissible_tau(grid, c.layout).tau;
}

inline ReducedTT build_sigma(const RunConfig& c, const ReducedGeometry& geom) {
    if (c.sigma_zero) return ReducedTT::zero(geom.n(), geom.grid().num_points);
    TTSpec spec;
    spec.s0 = c.s0;
    spec.offdiag = c.offdiag;
    if (c.free_diag_amp != 0.0)
        spec.free_diag.assign(geom.n() - 2,
                              c.free_diag_amp * geom.grid().coords().cos());
    return geom.make_tt_tensor(spec);
}

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, bool enabled) : enabled_(enabled) {
        if (enabled_) {
            out_.open(path);
            if (!out_) throw InvalidState("cannot open output file " + path.string());
        }
    }
    void row(const std::vector<std::string>& cells) {
        if (!enabled_) return;
        for (std::size_t i = 0; i < cells.size(); ++i)
            out_ << (i ? "," : "") << cells[i];
        out_ << "\n";
    }
    bool enabled() const { return enabled_; }

private:
    bool enabled_;
    std::ofstream out_;
};

inline void trace_csv(CsvWriter& w, const ContinuationTrace& trace) {
    w.row({"parameter", "sup_phi", "res_lich", "res_vector", "iterations", "branch"});
    for (const auto& p : trace.points)
        w.row({fmt(p.k), fmt(p.sup_phi), fmt(p.res_lich), fmt(p.res_vector),
               std::to_string(p.iterations), p.branch});
}

}  // namespace detail

/// Executes the configured experiment. Writes summary.txt (resolved config +
/// results) and CSV artifacts into the output directory. Throws on failure;
/// the CLI maps exception types to exit codes.
inline int run(const RunConfig& c) {
    namespace fs = std::filesystem;
    fs::create_directories(c.out_dir);
    std::ofstream summary(fs::path(c.out_dir) / "summary.txt");
    if (!summary) throw InvalidState("cannot open summary.txt in " + c.out_dir);
    summary << "# resolved configuration\n" << c.echo << "\n# results\n";
    auto res = [&](const std::string& key, const std::string& val) {
        summary << key << " = " << val << "\n";
    };
    using detail::fmt;

    if (c.mode == "halfcont-demo") {
        GalleryExample ex = halfcont_gallery(c.example, c.schaefer_a);
        AssociationCertificate cert = check_association(ex.assoc, c.seed);
        res("certificate_C", fmt(cert.C));
        res("sublevel_hits", std::to_string(cert.sublevel_hits));
        DichotomyResult d = dichotomy_search(ex.assoc, cert, c.tol, c.seed);
        std::string kind = d.kind == DichotomyKind::FixedPoint      ? "FixedPoint"
                           : d.kind == DichotomyKind::CriticalTuple ? "CriticalTuple"
                                                                    : "Inconclusive";
        res("dichotomy", kind);
        if (d.kind != DichotomyKind::Inconclusive) {
            res("t", fmt(d.t));
            res("x", fmt(d.x[0]));
            res("residual", fmt(d.residual));
        }
        if (d.kind == DichotomyKind::CriticalTuple)
            res("active_index", std::to_string(d.active_index));
        auto w = half_continuity_witness(ex.pointwise, ex.witness_point, 4000, c.seed);
        res("witness_found", w ? "true" : "false");
        if (w) {
            res("witness_p", fmt(w->p[0]));
            res("witness_radius", fmt(w->radius));
        }
        detail::CsvWriter csv(fs::path(c.out_dir) / "dichotomy.csv", c.csv);
        csv.row({"kind", "t", "x", "active_index", "residual"});
        csv.row({kind, fmt(d.t), d.x.size() ? fmt(d.x[0]) : "nan",
                 std::to_string(d.active_index), fmt(d.residual)});
        return 0;
    }

    ReducedGeometry geom = detail::build_geometry(c);
    const Grid& grid = geom.grid();
    const ScalarField x = grid.coords();
    res("min_R", fmt(geom.R().minCoeff()));

    if (c.mode == "geom-check") {
        VectorOp vop(geom);  // throws ConformalKillingKernel on a kernel
        LinearOperator1D half = LinearOperator1D::half_LL(geom);
        res("vector_op_smin", fmt(half.smallest_singular_value()));
        res("vector_op_smax", fmt(half.largest_singular_value()));
        detail::CsvWriter csv(fs::path(c.out_dir) / "geometry.csv", c.csv);
        std::vector<std::string> head = {"x", "A"};
        for (int i = 0; i < geom.num_B(); ++i) head.push_back("B" + std::to_string(i));
        head.push_back("R");
        csv.row(head);
        for (int i = 0; i < grid.num_points; ++i) {
            std::vector<std::string> row = {fmt(x[i]), fmt(geom.A()[i])};
            for (int b = 0; b < geom.num_B(); ++b) row.push_back(fmt(geom.B(b)[i]));
            row.push_back(fmt(geom.R()[i]));
            csv.row(row);
        }
        return 0;
    }

    ScalarField tau = detail::build_tau(c, grid);

    if (c.mode == "tau-admissibility") {
        const ScalarField omega = grid.deriv(tau).abs() / (tau * geom.A());
        AdmissibilityReport rep = compute_c(geom, tau, c.eps_c_rel * omega.maxCoeff());
        res("cmc", rep.cmc ? "true" : "false");
        res("violated", rep.violated ? "VIOLATED" : "ok");
        res("c", fmt(rep.c));
        res("a_min", fmt(rep.a_min));
        res("excluded_fraction", fmt(rep.excluded_fraction));
        res("cutoff", fmt(rep.cutoff));
        detail::CsvWriter csv(fs::path(c.out_dir) / "admissibility.csv", c.csv);
        csv.row({"x", "tau", "omega"});
        for (int i = 0; i < grid.num_points; ++i)
            csv.row({fmt(x[i]), fmt(tau[i]), fmt(omega[i])});
        return 0;
    }

    if (c.mode == "lichnerowicz") {
        ScalarField w = c.w_const + c.w_amp * x.cos();
        LichProblem prob(geom, tau, w, c.t);
        LichSolution sol = lich_solve(prob);
        res("iterations", std::to_string(sol.iterations));
        res("residual", fmt(sol.residual_norm));
        res("sup_phi", fmt(sol.phi.maxCoeff()));
        res("min_phi", fmt(sol.phi.minCoeff()));
        detail::CsvWriter csv(fs::path(c.out_dir) / "solution.csv", c.csv);
        csv.row({"x", "phi"});
        for (int i = 0; i < grid.num_points; ++i) csv.row({fmt(x[i]), fmt(sol.phi[i])});
        return 0;
    }

    ReducedTT sigma = detail::build_sigma(c, geom);
    SeedData seed(geom, tau, sigma, c.a, c.t, c.k);

    if (c.mode == "coupled") {
        SolveReport rep = picard_solve(seed, ScalarField::Ones(grid.num_points), 200, c.tol);
        res("iterations", std::to_string(rep.iterations));
        res("res_lich", fmt(rep.res_lich));
        res("res_vector", fmt(rep.res_vector));
        res("sup_phi", fmt(rep.sup_phi));
        detail::CsvWriter csv(fs::path(c.out_dir) / "solution.csv", c.csv);
        csv.row({"x", "phi", "W"});
        for (int i = 0; i < grid.num_points; ++i)
            csv.row({fmt(x[i]), fmt(rep.phi[i]), fmt(rep.W[i])});
        return 0;
    }

    if (c.mode == "k-sweep") {
        std::vector<double> kg = c.k_grid;
        if (kg.empty()) {
            // default: linear ramp 0..k_max
            for (int j = 0; j < c.k_steps; ++j)
                kg.push_back(c.k_max * j / double(c.k_steps - 1));
        }
        ContinuationTrace trace = k_sweep(seed, kg, c.tol);
        res("points", std::to_string(trace.points.size()));
        res("fold_found", trace.fold_found ? "true" : "false");
        if (trace.fold_found) res("k_fold", fmt(trace.k_fold));
        double sup = 0.0;
        for (const auto& p : trace.points) sup = std::max(sup, p.sup_phi);
        res("sup_phi_over_sweep", fmt(sup));
        detail::CsvWriter csv(fs::path(c.out_dir) / "trace.csv", c.csv);
        detail::trace_csv(csv, trace);
        return 0;
    }

    if (c.mode == "two-solutions") {
        TwoSolutions two = find_two_solutions(seed, c.k_max, c.k_steps, c.tol);
        double gap = std::abs(two.large.sup_phi - two.small.sup_phi) /
                     std::max(two.small.sup_phi, 1e-300);
        res("fold_found", two.trace.fold_found ? "true" : "false");
        if (two.trace.fold_found) res("k_fold", fmt(two.trace.k_fold));
        res("sup_phi_small", fmt(two.small.sup_phi));
        res("sup_phi_large", fmt(two.large.sup_phi));
        res("relative_gap", fmt(gap));
        res("res_lich_small", fmt(two.small.res_lich));
        res("res_vector_small", fmt(two.small.res_vector));
        res("res_lich_large", fmt(two.large.res_lich));
        res("res_vector_large", fmt(two.large.res_vector));
        detail::CsvWriter trace(fs::path(c.out_dir) / "trace.csv", c.csv);
        detail::trace_csv(trace, two.trace);
        detail::CsvWriter sol(fs::path(c.out_dir) / "solutions.csv", c.csv);
        sol.row({"x", "phi_small", "W_small", "phi_large", "W_large"});
        for (int i = 0; i < grid.num_points; ++i)
            sol.row({fmt(x[i]), fmt(two.small.phi[i]), fmt(two.small.W[i]),
                     fmt(two.large.phi[i]), fmt(two.large.W[i])});
        return 0;
    }

    throw InvalidState("run: unhandled mode '" + c.mode + "'");  // unreachable
}

}  // namespace cclab
