#pragma once

// Command implementations of the hfmm tool. Kept in a header so the test
// suite can drive them in-process with string streams.

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hfmm/hfmm.hpp"

namespace hfmm::cli {

enum Exit { kOk = 0, kConfig = 1, kStructural = 2, kInvariant = 3 };

struct ExperimentConfig {
    std::string curve = "kite";
    int n = 500;
    double k = 5.0;
    double d = 4.0;
    int leaf_cap = 6;
    std::string center = "auto";  ///< "auto" or "X,Y"
    bool strict_levels = false;
    std::optional<int> p;
    std::optional<int> p_min, p_max;
    std::string op = "S";
    double c = 1.2;
    std::vector<std::string> x_index;  ///< 1-based indices or "auto"
    std::string out;
    std::string norm_out;
    int workers = 1;

    // tails
    double x = 3.0, y = 1.0;
    int m_min = 0, m_max = 30;
    int tail_terms = kDefaultTailTerms;

    // decompose
    double identity_tol = 1e-12;
    double identity_rel = LabOptions{}.identity_rel;

    // suggest-p
    double eps = 0.0;

    // tree-dump
    bool points = false;
};

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10e", v);
    return buf;
}

inline std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline OperatorKind parse_op(const std::string& s) {
    if (s == "S") return OperatorKind::S;
    if (s == "K") return OperatorKind::K;
    throw ConfigError("operator must be S or K, got " + s);
}

inline std::pair<int, int> p_range(const ExperimentConfig& c, int lo, int hi) {
    if (c.p) lo = hi = *c.p;
    if (c.p_min) lo = *c.p_min;
    if (c.p_max) hi = *c.p_max;
    if (lo < 1 || hi < lo) throw ConfigError("p range must be non-empty, ascending and >= 1");
    return {lo, hi};
}

inline void validate(const ExperimentConfig& c) {
    if (c.n < 1) throw ConfigError("n must be positive");
    if (!(c.k > 0.0) || !std::isfinite(c.k)) throw ConfigError("k must be positive");
    if (!(c.d > 0.0) || !std::isfinite(c.d)) throw ConfigError("d must be positive");
    if (c.leaf_cap < 1) throw ConfigError("leaf-cap must be positive");
    if (!(c.c > 0.0)) throw ConfigError("c must be positive");
    if (c.workers < 1) throw ConfigError("workers must be >= 1");
    parse_op(c.op);
}

/// Root center: explicit "X,Y", or for "auto" (-0.5, 0) on the kite and the
/// knot bounding-box center otherwise.
inline std::optional<Vec2> root_center(const ExperimentConfig& c) {
    if (c.center == "auto") {
        if (c.curve == "kite") return Vec2{-0.5, 0.0};
        return std::nullopt;
    }
    const auto comma = c.center.find(',');
    if (comma == std::string::npos) throw ConfigError("center must be auto or X,Y");
    try {
        std::size_t u1 = 0, u2 = 0;
        const std::string a = c.center.substr(0, comma), b = c.center.substr(comma + 1);
        const double x = std::stod(a, &u1), y = std::stod(b, &u2);
        if (u1 != a.size() || u2 != b.size()) throw ConfigError("bad center " + c.center);
        return Vec2{x, y};
    } catch (const std::logic_error&) {
        throw ConfigError("bad center " + c.center);
    }
}

inline TreeOptions tree_options(const ExperimentConfig& c) {
    TreeOptions t;
    t.side = c.d;
    t.center = root_center(c);
    t.leaf_cap = c.leaf_cap;
    t.policy = c.strict_levels ? LevelDiffPolicy::error : LevelDiffPolicy::demote_to_near;
    return t;
}

/// Canonical description of everything that determines the output.
inline std::vector<std::pair<std::string, std::string>> describe(const std::string& command,
                                                                 const ExperimentConfig& c) {
    std::vector<std::pair<std::string, std::string>> kv{{"command", command}};
    auto add = [&](const std::string& key, const std::string& v) { kv.emplace_back(key, v); };
    if (command == "tails") {
        add("x", num(c.x));
        add("y", num(c.y));
        add("m-min", std::to_string(c.m_min));
        add("m-max", std::to_string(c.m_max));
        add("tail-terms", std::to_string(c.tail_terms));
    } else {
        add("curve", c.curve);
        add("n", std::to_string(c.n));
        add("k", num(c.k));
        add("d", num(c.d));
        add("leaf-cap", std::to_string(c.leaf_cap));
        add("center", c.center);
        add("strict-levels", c.strict_levels ? "1" : "0");
        add("op", c.op);
    }
    if (command == "decompose" || command == "suggest-p") add("c", num(c.c));
    if (command == "decompose") {
        add("identity-tol", num(c.identity_tol));
        add("identity-rel", num(c.identity_rel));
    }
    if (command == "suggest-p") add("eps", num(c.eps));
    if (command == "tree-dump") add("points", c.points ? "1" : "0");
    return kv;
}

class Writer {
public:
    Writer(const std::string& path, std::ostream& fallback) : out_(&fallback) {
        if (!path.empty()) {
            file_.open(path);
            if (!file_) throw ConfigError("cannot open output file " + path);
            out_ = &file_;
        }
    }
    std::ostream& os() { return *out_; }

    void header(const std::string& command, const ExperimentConfig& c,
                const std::vector<std::pair<std::string, std::string>>& extra) {
        auto kv = describe(command, c);
        kv.insert(kv.end(), extra.begin(), extra.end());
        std::string canon;
        for (const auto& [key, v] : kv) canon += key + "=" + v + "\n";
        char hash[17];
        std::snprintf(hash, sizeof hash, "%016" PRIx64, fnv1a(canon));
        os() << "# hfmm " << kVersion << "\n";
        for (const auto& [key, v] : kv) os() << "# " << key << "=" << v << "\n";
        os() << "# config_hash=" << hash << "\n";
    }

private:
    std::ofstream file_;
    std::ostream* out_;
};

struct Problem {
    BoundaryDisc disc;
    Quadtree tree;

    explicit Problem(const ExperimentConfig& c)
        : disc(discretize(curve_from_spec(c.curve), c.n)), tree(disc, tree_options(c)) {}
};

/// 0-based point indices from 1-based strings. "auto" picks the lowest-index
/// point of each far-count pattern (N_1, N_2) = (0, 0), (+, 0), (0, +) present
/// in the tree.
inline std::vector<int> select_points(const ExperimentConfig& c, const Quadtree& tree) {
    std::vector<int> out;
    const long size = static_cast<long>(tree.point_count());
    std::vector<std::string> spec = c.x_index;
    if (spec.empty()) spec.push_back("auto");
    for (const std::string& s : spec) {
        if (s == "auto") {
            for (int I = 0; I < 3; ++I)
                for (long j = 0; j < size; ++j) {
                    const FarCounts f = tree.far_counts(static_cast<int>(j));
                    const bool match = I == 0 ? f.n[1] == 0 && f.n[2] == 0
                                              : f.n[I] > 0 && f.n[3 - I] == 0;
                    if (f.n[0] > 0 && match) {
                        out.push_back(static_cast<int>(j));
                        break;
                    }
                }
            continue;
        }
        long v = 0;
        try {
            std::size_t used = 0;
            v = std::stol(s, &used);
            if (used != s.size()) throw ConfigError("bad x-index " + s);
        } catch (const std::logic_error&) {
            throw ConfigError("bad x-index " + s);
        }
        if (v < 1 || v > size) throw ConfigError("x-index " + s + " outside 1.." + std::to_string(size));
        out.push_back(static_cast<int>(v - 1));
    }
    return out;
}

inline int cmd_tails(const ExperimentConfig& c, std::ostream& out) {
    if (!(c.x > c.y) || c.y < 0.0) throw ConfigError("tails needs x > y >= 0");
    if (c.m_min < 0 || c.m_max < c.m_min) throw ConfigError("m range must be non-empty with m >= 0");
    if (c.tail_terms < 2 || c.tail_terms > kOrderCap - c.m_max - 2) throw ConfigError("tail-terms out of range");
    const auto [p_lo, p_hi] = p_range(c, 3, 40);
    Writer w(c.out, out);
    w.header("tails", c, {{"p-min", std::to_string(p_lo)}, {"p-max", std::to_string(p_hi)}});
    std::ostream& os = w.os();
    os << "m,p,eps_exact,bound_l7,bound_l8,applicable_l7,applicable_l8\n";
    for (int m = c.m_min; m <= c.m_max; ++m) {
        const double s_m =
            tail_sum(TailKernel::Y, {m, -1, c.x, c.y}, c.tail_terms, TailForm::one_sided).value;
        for (int p = p_lo; p <= p_hi; ++p) {
            const TailQuery q{m, p, c.x, c.y};
            const double eps = relative_tail(m, p, c.x, c.y, c.tail_terms);
            const bool a7 = applicable_l7(q), a8 = applicable_l8(q);
            std::optional<double> b7, b8;
            if (a7) b7 = bound_jy_l7(q) / s_m;
            if (a8) b8 = bound_jy_l8(q) / s_m;
            os << m << ',' << p << ',' << num(eps) << ',' << num(b7) << ',' << num(b8) << ',' << a7 << ',' << a8
               << '\n';
        }
    }
    return kOk;
}

inline int cmd_fmm(const ExperimentConfig& c, std::ostream& out, std::ostream& err) {
    const auto [p, p_hi] = p_range(c, 40, 40);
    if (p != p_hi) throw ConfigError("fmm takes a single p");
    Problem pb(c);
    const FmmConfig cfg{c.k, p, parse_op(c.op), c.workers};
    validate(cfg);
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const std::vector<cplx> fast = apply(pb.disc, pb.tree, cfg);
    const auto t1 = clock::now();
    const std::vector<cplx> direct = direct_apply(pb.disc, cfg);
    const auto t2 = clock::now();

    Writer w(c.out, out);
    w.header("fmm", c, {{"p", std::to_string(p)}});
    std::ostream& os = w.os();
    os << "index,x,y,fmm_re,fmm_im,direct_re,direct_im,abs_diff\n";
    double inf = 0.0, two = 0.0, dinf = 0.0, dtwo = 0.0;
    for (std::size_t i = 0; i < fast.size(); ++i) {
        const double e = std::abs(fast[i] - direct[i]);
        inf = std::max(inf, e);
        two += e * e;
        dinf = std::max(dinf, std::abs(direct[i]));
        dtwo += std::norm(direct[i]);
        const Vec2 x = pb.disc.knots[i];
        os << i + 1 << ',' << num(x.x) << ',' << num(x.y) << ',' << num(fast[i].real()) << ','
           << num(fast[i].imag()) << ',' << num(direct[i].real()) << ',' << num(direct[i].imag()) << ',' << num(e)
           << '\n';
    }
    two = std::sqrt(two);
    dtwo = std::sqrt(dtwo);
    os << "# inf_norm=" << num(inf) << " rel_inf_norm=" << num(inf / dinf) << "\n";
    os << "# norm2=" << num(two) << " rel_norm2=" << num(two / dtwo) << "\n";
    const double tf = std::chrono::duration<double>(t1 - t0).count();
    const double td = std::chrono::duration<double>(t2 - t1).count();
    err << "fmm " << tf << " s, direct " << td << " s, rel inf-norm " << inf / dinf << "\n";
    return kOk;
}

inline int cmd_decompose(const ExperimentConfig& c, std::ostream& out, std::ostream& err) {
    const auto [p_lo, p_hi] = p_range(c, 1, 30);
    Problem pb(c);
    const OperatorKind op = parse_op(c.op);
    const std::vector<int> xs = select_points(c, pb.tree);
    if (xs.empty()) throw ConfigError("no source points selected");
    LabOptions lo;
    lo.p_max = p_hi;
    lo.workers = c.workers;
    lo.identity_abs = c.identity_tol;
    lo.identity_rel = c.identity_rel;
    ErrorLab lab(pb.disc, pb.tree, c.k, op, lo);
    const BoundSetting bs = bound_setting(pb.disc, pb.tree, c.k, c.c);
    const FarCounts tree_max = max_far_counts(pb.tree);
    const double radius = empirical_radius(pb.tree);
    const std::vector<cplx> direct = direct_apply(pb.disc, {c.k, 1, op, c.workers});

    std::vector<std::vector<std::string>> rows(xs.size());
    std::vector<std::string> norm_rows;
    for (int p = p_lo; p <= p_hi; ++p) {
        const Analysis a = lab.analyze(p);
        for (std::size_t t = 0; t < xs.size(); ++t) {
            const ErrorDecomposition dec = lab.decompose(xs[t], a);
            const auto m = dec.magnitudes();
            BoundReport br;
            if (op == OperatorKind::S) br = bounds_at(p, bs, pb.tree.far_counts(xs[t]));
            const auto b = br.values();
            std::string row = std::to_string(xs[t] + 1) + ',' + std::to_string(p);
            for (double v : m) row += ',' + num(v);
            for (const auto& v : b) row += ',' + num(v);
            row += ',';
            for (const auto& v : b) row += v ? '1' : '0';
            rows[t].push_back(row);
        }
        const std::vector<cplx> fast = a.fmm().result();
        double n2 = 0.0;
        for (std::size_t i = 0; i < fast.size(); ++i) n2 += std::norm(fast[i] - direct[i]);
        std::optional<double> th, em;
        if (applicable_norm2(p, bs, tree_max)) {
            const Norm2Bound nb = bound_norm2(p, bs, tree_max, op, radius);
            th = nb.theoretical;
            em = nb.empirical;
        }
        norm_rows.push_back(std::to_string(p) + ',' + num(std::sqrt(n2)) + ',' + num(th) + ',' + num(em) + ',' +
                            num(radius));
        err << "p=" << p << " done\n";
    }

    const std::vector<std::pair<std::string, std::string>> extra{{"p-min", std::to_string(p_lo)},
                                                                 {"p-max", std::to_string(p_hi)}};
    Writer w(c.out, out);
    w.header("decompose", c, extra);
    std::ostream& os = w.os();
    os << "x_index,p,abs_es1,abs_es2,abs_es31,abs_es32,abs_es4,bound1,bound2,bound31,bound32,bound4,"
          "applicable_flags\n";
    for (const auto& r : rows)
        for (const auto& line : r) os << line << '\n';

    std::optional<Writer> separate;
    if (!c.norm_out.empty()) {
        separate.emplace(c.norm_out, out);
        separate->header("decompose", c, extra);
    } else {
        os << "# norms\n";
    }
    std::ostream& ns = separate ? separate->os() : os;
    ns << "p,norm2,bound_norm2_theoretical,bound_norm2_empirical,empirical_radius\n";
    for (const auto& line : norm_rows) ns << line << '\n';
    return kOk;
}

inline int cmd_suggest_p(const ExperimentConfig& c, std::ostream& out) {
    if (!(c.eps > 0.0)) throw ConfigError("suggest-p needs --eps > 0");
    if (parse_op(c.op) != OperatorKind::S) throw ConfigError("suggest-p uses the single-layer bounds; use --op S");
    Problem pb(c);
    const BoundSetting bs = bound_setting(pb.disc, pb.tree, c.k, c.c);
    FarCounts f;
    if (c.x_index.empty()) {
        f = max_far_counts(pb.tree);
    } else {
        const std::vector<int> xs = select_points(c, pb.tree);
        if (xs.size() != 1) throw ConfigError("suggest-p takes at most one x-index");
        f = pb.tree.far_counts(xs[0]);
    }
    out << suggest_p(c.eps, bs, f) << '\n';
    return kOk;
}

inline int cmd_tree_dump(const ExperimentConfig& c, std::ostream& out) {
    Problem pb(c);
    Writer w(c.out, out);
    w.header("tree-dump", c,
             {{"max_level", std::to_string(pb.tree.max_level())},
              {"demoted", std::to_string(pb.tree.demoted_count())}});
    std::ostream& os = w.os();
    if (c.points) {
        os << "index,x,y,leaf,n0,n1,n2,near,max_diff\n";
        for (std::size_t j = 0; j < pb.tree.point_count(); ++j) {
            const int i = static_cast<int>(j);
            const FarCounts f = pb.tree.far_counts(i);
            const Vec2 x = pb.disc.knots[j];
            os << j + 1 << ',' << num(x.x) << ',' << num(x.y) << ',' << pb.tree.leaf_of(i) << ',' << f.n[0] << ','
               << f.n[1] << ',' << f.n[2] << ',' << f.near << ',' << f.max_diff << '\n';
        }
        return kOk;
    }
    os << "cell_id,level,cx,cy,half_width,parent,is_leaf,n_points\n";
    for (const Cell& cell : pb.tree.cells())
        os << cell.id << ',' << cell.level << ',' << num(cell.center.x) << ',' << num(cell.center.y) << ','
           << num(cell.half_width) << ',' << cell.parent << ',' << cell.is_leaf() << ',' << cell.count() << '\n';
    return kOk;
}

/// Parses argv and runs one subcommand; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    ExperimentConfig c;
    CLI::App app{"Helmholtz FMM and truncation-error laboratory", "hfmm"};
    app.set_config("--config", "", "flat key=value file; flags override it");
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.fallthrough();

    app.add_option("--curve", c.curve, "kite, circle:R, or a curve CSV path")->capture_default_str();
    app.add_option("--n", c.n, "N (2N knots)")->capture_default_str();
    app.add_option("--k", c.k, "wave number")->capture_default_str();
    app.add_option("--d", c.d, "root cell side")->capture_default_str();
    app.add_option("--leaf-cap", c.leaf_cap, "max points per leaf")->capture_default_str();
    app.add_option("--center", c.center, "root center X,Y or auto")->capture_default_str();
    app.add_flag("--strict-levels", c.strict_levels, "reject trees needing level difference > 2");
    app.add_option("--p", c.p, "truncation number");
    app.add_option("--p-min", c.p_min, "smallest truncation number of a sweep");
    app.add_option("--p-max", c.p_max, "largest truncation number of a sweep");
    app.add_option("--op", c.op, "operator")->check(CLI::IsMember({"S", "K"}))->capture_default_str();
    app.add_option("--c", c.c, "constant of the E_S,4 bound")->capture_default_str();
    app.add_option("--x-index", c.x_index, "1-based source point index, or auto")->delimiter(',');
    app.add_option("--out", c.out, "write CSV here instead of stdout");
    app.add_option("--workers", c.workers, "worker threads")->capture_default_str();

    auto* tails = app.add_subcommand("tails", "relative Graf tails against their bounds");
    tails->add_option("--x", c.x, "outer argument")->capture_default_str();
    tails->add_option("--y", c.y, "inner argument")->capture_default_str();
    tails->add_option("--m-min", c.m_min)->capture_default_str();
    tails->add_option("--m-max", c.m_max)->capture_default_str();
    tails->add_option("--tail-terms", c.tail_terms, "summation length")->capture_default_str();

    auto* fmm = app.add_subcommand("fmm", "FMM product against the direct product");
    auto* dec = app.add_subcommand("decompose", "error parts and bounds at source points");
    dec->add_option("--norm-out", c.norm_out, "write the 2-norm table to a separate file");
    dec->add_option("--identity-tol", c.identity_tol, "absolute tolerance of the decomposition identity")
        ->capture_default_str();
    dec->add_option("--identity-rel", c.identity_rel, "rounding allowance per unit of summed far-field magnitude")
        ->capture_default_str();
    auto* sp = app.add_subcommand("suggest-p", "smallest p whose E_S,1 + E_S,31 bound meets eps");
    sp->add_option("--eps", c.eps, "target accuracy")->required();
    auto* td = app.add_subcommand("tree-dump", "quadtree cells or per-point far counts");
    td->add_flag("--points", c.points, "dump per-point far counts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfig;
    }

    try {
        validate(c);
        if (tails->parsed()) return cmd_tails(c, out);
        if (fmm->parsed()) return cmd_fmm(c, out, err);
        if (dec->parsed()) return cmd_decompose(c, out, err);
        if (sp->parsed()) return cmd_suggest_p(c, out);
        if (td->parsed()) return cmd_tree_dump(c, out);
    } catch (const StructuralError& e) {
        err << "structural error: " << e.what() << '\n';
        return kStructural;
    } catch (const InvariantViolation& e) {
        err << "invariant violation: " << e.what() << '\n';
        return kInvariant;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kConfig;
    }
    return kConfig;
}

}  // namespace hfmm::cli
