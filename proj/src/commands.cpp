#include "anosov/commands.hpp"

#include "anosov/holonomy.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace anosov {

using nlohmann::json;

namespace {

const json& section(const json& cfg, const char* key)
{
    static const json empty = json::object();
    if (!cfg.contains(key)) return empty;
    const json& s = cfg.at(key);
    if (!s.is_object()) throw ConfigError(std::string("field '") + key + "': expected an object");
    return s;
}

template <class T>
T field(const json& j, const char* key, T def, const std::string& where)
{
    try {
        return j.value(key, def);
    } catch (const json::exception&) {
        throw ConfigError("field '" + where + "." + key + "': wrong type (" + j.at(key).dump() + ")");
    }
}

MapSequence load_sequence(const RunConfig& rc)
{
    const SequenceSpec spec = sequence_from_config(rc.config);
    try {
        return build_sequence(spec);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("sequence: ") + e.what());
    }
}

ValidationReport run_validation(const RunConfig& rc, const MapSequence& seq)
{
    return validate_assumptions(seq, validation_options_from_json(section(rc.config, "validation")));
}

std::string first_failure(const ValidationReport& r)
{
    for (const auto& c : r.checks)
        if (!c.pass) return c.name + (c.detail.empty() ? "" : " (" + c.detail + ")");
    return "";
}

// The precondition shared by every command except validate. Returns false when
// the command must stop.
bool precheck(const RunConfig& rc, const ValidationReport& rep, CommandResult& res)
{
    if (rep.pass()) return true;
    if (rc.force) {
        res.messages.push_back("warning: sequence fails validation at " + first_failure(rep) +
                               "; continuing because of --force");
        return true;
    }
    res.exit_code = kExitProperty;
    res.messages.push_back("sequence fails validation at " + first_failure(rep) +
                           "; rerun with --force to proceed");
    res.files["validation.json"] = json_document(rc, validation_report_to_json(rep));
    return false;
}

double min_lambda(const ValidationReport& rep)
{
    double l = std::numeric_limits<double>::infinity();
    for (const auto& c : rep.constants) l = std::min(l, c.lambda);
    return l;
}

double tangent_angle(const Vec2& u) { return std::atan2(u.y(), u.x()); }

std::string padded(long n)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04ld", n);
    return buf;
}

}  // namespace

const std::vector<std::string>& command_names()
{
    static const std::vector<std::string> names = {"validate", "fields",  "evolve",
                                                   "holonomy", "couple", "memloss"};
    return names;
}

CommandResult cmd_validate(const RunConfig& rc)
{
    CommandResult res;
    const MapSequence seq = load_sequence(rc);
    const ValidationReport rep = run_validation(rc, seq);
    json report = validation_report_to_json(rep);
    report["sequence"] = sequence_spec_to_json(sequence_from_config(rc.config));
    report["length"] = seq.length();
    res.files["validation.json"] = json_document(rc, report);
    for (const auto& c : rep.constants) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "guide %d: Lambda %.9f C %.6f k %d", c.q + 1, c.lambda, c.c, c.k);
        res.messages.push_back(buf);
    }
    if (rep.pass()) {
        res.messages.push_back("validation: pass");
    } else {
        res.exit_code = kExitProperty;
        res.messages.push_back("validation: fail at " + first_failure(rep));
    }
    return res;
}

CommandResult cmd_fields(const RunConfig& rc)
{
    CommandResult res;
    const json& fj = section(rc.config, "fields");
    check_keys(fj, {"grid", "times", "kinds", "policy", "holder"}, "fields");
    const int grid = field(fj, "grid", 16, "fields");
    if (grid < 1 || grid > 1024) throw ConfigError("field 'fields.grid': must lie in [1, 1024]");
    const auto times = field(fj, "times", std::vector<long>{0}, "fields");
    const auto kinds =
        field(fj, "kinds", std::vector<std::string>{"stable", "unstable"}, "fields");
    std::vector<FieldKind> kk;
    for (const auto& k : kinds) {
        if (k == "stable") kk.push_back(FieldKind::Stable);
        else if (k == "unstable") kk.push_back(FieldKind::Unstable);
        else throw ConfigError("field 'fields.kinds': unknown kind '" + k + "'");
    }
    const FieldPolicy policy = field_policy_from_json(fj.value("policy", json::object()));

    const MapSequence seq = load_sequence(rc);
    const ValidationReport rep = run_validation(rc, seq);
    if (!precheck(rc, rep, res)) return res;
    const LineFieldEvaluator f(seq, policy);

    struct Job {
        std::size_t kind;
        long n;
        Vec2 x;
    };
    std::vector<Job> jobs;
    for (std::size_t k = 0; k < kk.size(); ++k)
        for (long n : times)
            for (int i = 0; i < grid; ++i)
                for (int j = 0; j < grid; ++j)
                    jobs.push_back({k, n, Vec2((i + 0.5) / grid, (j + 0.5) / grid)});
    std::vector<FieldValue> vals(jobs.size());
    std::vector<char> ok(jobs.size(), 1);
    parallel_for(jobs.size(), rc.threads, [&](std::size_t i) {
        try {
            vals[i] = f.eval(kk[jobs[i].kind], jobs[i].n, jobs[i].x);
        } catch (const std::runtime_error&) {
            ok[i] = 0;
        }
    });

    CsvTable t({"kind", "n", "x", "y", "angle", "certificate", "depth"});
    long failed = 0;
    double worst = 0.0;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const auto& jb = jobs[i];
        if (ok[i]) {
            worst = std::max(worst, vals[i].certificate);
            t.add_row({kinds[jb.kind], jb.n, jb.x.x(), jb.x.y(), vals[i].dir.angle(),
                       vals[i].certificate, vals[i].depth});
        } else {
            ++failed;
            t.add_row({kinds[jb.kind], jb.n, jb.x.x(), jb.x.y(), "nan", "nan", -1});
        }
    }
    res.files["fields.csv"] = csv_document(rc, t);

    json report = {{"points", jobs.size()},
                   {"uncertified", failed},
                   {"max_certificate", worst},
                   {"tol", policy.tol},
                   {"validation_pass", rep.pass()}};
    if (fj.contains("holder")) {
        const json& hj = fj.at("holder");
        check_keys(hj, {"k_min", "k_max", "samples"}, "fields.holder");
        HolderOptions ho;
        ho.k_min = field(hj, "k_min", ho.k_min, "fields.holder");
        ho.k_max = field(hj, "k_max", ho.k_max, "fields.holder");
        ho.samples_per_scale = field(hj, "samples", ho.samples_per_scale, "fields.holder");
        ho.seed = rc.seed;
        json est = json::array();
        for (std::size_t k = 0; k < kk.size(); ++k) {
            for (long n : times) {
                const HolderEstimate h = estimate_holder(f, n, kk[k], ho, min_lambda(rep), rep.b1);
                est.push_back({{"kind", kinds[k]},     {"n", n},
                               {"alpha", h.alpha},     {"constant", h.constant},
                               {"r2", h.r2},           {"flat", h.flat},
                               {"alpha_pred", h.alpha_pred},
                               {"scales", h.scales},   {"mean_dist", h.mean_dist}});
            }
        }
        report["holder"] = est;
    }
    res.files["fields_report.json"] = json_document(rc, report);
    if (failed > 0) {
        res.exit_code = kExitProperty;
        res.messages.push_back(std::to_string(failed) + " field values did not reach the certificate");
    }
    return res;
}

CommandResult cmd_evolve(const RunConfig& rc)
{
    CommandResult res;
    const json& ej = section(rc.config, "evolve");
    check_keys(ej, {"steps", "every", "max_pairs", "mass_tol"}, "evolve");
    const int steps = field(ej, "steps", 10, "evolve");
    const int every = field(ej, "every", 1, "evolve");
    const double mass_tol = field(ej, "mass_tol", 1e-10, "evolve");
    FamilyCap cap;
    cap.max_pairs = field(ej, "max_pairs", std::size_t{200}, "evolve");
    cap.seed = rc.seed;
    if (steps < 0 || every < 1) throw ConfigError("field 'evolve': need steps >= 0 and every >= 1");
    const CurveParams cp = curve_params_from_json(section(rc.config, "curve"));
    const FamilySpec fs = family_spec_from_json(section(rc.config, "family"), "family", rc.seed);

    const MapSequence seq = load_sequence(rc);
    const ValidationReport rep = run_validation(rc, seq);
    if (!precheck(rc, rep, res)) return res;

    StandardFamily fam = make_family(seq, fs);
    json history = json::array();
    double worst_weight = 0.0, worst_pair = 0.0;
    for (int step = 0; step <= steps; ++step) {
        if (step > 0) evolve_family(seq, fam, fam.time + 1, cp, cap, rc.threads);
        double wsum = 0.0, pair_err = 0.0, kmax = 0.0, lmin = 1e300, lmax = 0.0;
        long remnants = 0;
        for (std::size_t i = 0; i < fam.pairs.size(); ++i) {
            const auto& p = fam.pairs[i];
            wsum += fam.weights[i];
            pair_err = std::max(pair_err, std::abs(p.total_mass() - 1.0));
            kmax = std::max(kmax, p.max_curvature());
            const double len = p.length();
            lmin = std::min(lmin, len);
            lmax = std::max(lmax, len);
            remnants += p.remnant ? 1 : 0;
        }
        worst_weight = std::max(worst_weight, std::abs(wsum - 1.0));
        worst_pair = std::max(worst_pair, pair_err);
        history.push_back({{"time", fam.time},
                           {"pairs", fam.pairs.size()},
                           {"remnants", remnants},
                           {"weight_error", std::abs(wsum - 1.0)},
                           {"pair_mass_error", pair_err},
                           {"max_curvature", kmax},
                           {"min_length", lmin},
                           {"max_length", lmax}});
        if (step % every != 0 && step != steps) continue;
        CsvTable t({"time", "pair", "weight", "node", "s", "x", "y", "angle", "log_rho", "r"});
        for (std::size_t i = 0; i < fam.pairs.size(); ++i) {
            const auto& p = fam.pairs[i];
            const auto arc = p.arc_table();
            for (std::size_t k = 0; k < p.nodes.size(); ++k) {
                const auto& nd = p.nodes[k];
                t.add_row({fam.time, i, fam.weights[i], k, arc[k], wrap_unit(nd.p.x()),
                           wrap_unit(nd.p.y()), tangent_angle(nd.u), nd.log_rho, nd.r});
            }
        }
        res.files["snapshot_" + padded(fam.time) + ".csv"] = csv_document(rc, t);
    }
    const bool pass = worst_weight <= mass_tol && worst_pair <= mass_tol;
    json report = {{"pass", pass},
                   {"mass_tol", mass_tol},
                   {"weight_error", worst_weight},
                   {"pair_mass_error", worst_pair},
                   {"validation_pass", rep.pass()},
                   {"steps", history}};
    res.files["evolve_report.json"] = json_document(rc, report);
    if (!pass) {
        res.exit_code = kExitProperty;
        res.messages.push_back("mass conservation violated beyond " + format_double(mass_tol));
    }
    return res;
}

CommandResult cmd_holonomy(const RunConfig& rc)
{
    CommandResult res;
    const json& hj = section(rc.config, "holonomy");
    check_keys(hj, {"time", "center", "offset", "length", "h", "samples", "m_max", "leaf_max", "r2_min"},
               "holonomy");
    const long time = field(hj, "time", 0L, "holonomy");
    const auto center = field(hj, "center", std::vector<double>{0.3, 0.4}, "holonomy");
    if (center.size() != 2) throw ConfigError("field 'holonomy.center': expected [x, y]");
    const double offset = field(hj, "offset", 0.01, "holonomy");
    const double length = field(hj, "length", 0.2, "holonomy");
    const double h = field(hj, "h", 1e-3, "holonomy");
    const int samples = field(hj, "samples", 101, "holonomy");
    const int m_max = field(hj, "m_max", 30, "holonomy");
    const double r2_min = field(hj, "r2_min", 0.9, "holonomy");
    LeafOptions lo;
    lo.max_len = field(hj, "leaf_max", lo.max_len, "holonomy");
    if (samples < 2) throw ConfigError("field 'holonomy.samples': need at least 2");
    if (!(std::abs(offset) < lo.max_len))
        throw ConfigError("field 'holonomy.offset': must be smaller than leaf_max");

    const MapSequence seq = load_sequence(rc);
    const ValidationReport rep = run_validation(rc, seq);
    if (!precheck(rc, rep, res)) return res;
    const LineFieldEvaluator f(seq);

    const GuideMap& gu = seq.guide(seq.unstable_family(time));
    const Vec2 c(center[0], center[1]);
    const Vec2 eu = gu.split.unstable.unit();
    const Vec2 es = gu.split.stable.unit();
    const StandardPair w1 = make_segment_pair(c, eu, length, h, time);
    const StandardPair w2 = make_segment_pair(c + offset * es, eu, length, h, time);
    std::vector<double> s1;
    for (int i = 0; i < samples; ++i) s1.push_back(length * (0.1 + 0.8 * i / (samples - 1.0)));
    const HolonomyMap hol = build_holonomy(f, w1, w2, s1, lo, rc.threads);

    std::vector<HolonomyJacobian> jacs(hol.pairs.size());
    parallel_for(hol.pairs.size(), rc.threads,
                 [&](std::size_t i) { jacs[i] = holonomy_jacobian(f, time, hol.pairs[i]); });

    CsvTable t({"s1", "s2", "x", "y", "hx", "hy", "leaf_length", "log_jh", "jh", "depth", "converged"});
    bool converged = true;
    for (std::size_t i = 0; i < hol.pairs.size(); ++i) {
        const auto& p = hol.pairs[i];
        converged = converged && jacs[i].converged;
        t.add_row({p.s1, p.s2, wrap_unit(p.x.x()), wrap_unit(p.x.y()), wrap_unit(p.hx.x()),
                   wrap_unit(p.hx.y()), p.leaf_length, jacs[i].log_jac, std::exp(jacs[i].log_jac),
                   jacs[i].depth, jacs[i].converged});
    }
    res.files["holonomy.csv"] = csv_document(rc, t);

    json report = {{"time", time},
                   {"attempted", hol.attempted},
                   {"matched", hol.pairs.size()},
                   {"domain_fraction", hol.domain_fraction},
                   {"monotone", hol.monotone},
                   {"converged", converged},
                   {"validation_pass", rep.pass()}};
    bool pass = converged && hol.monotone && !hol.pairs.empty();
    double c1 = 0.0;
    for (const auto& j : jacs) c1 = std::max(c1, std::abs(j.log_jac));
    report["c1"] = c1;
    if (c1 <= 1e-12) {
        report["decay"] = {{"flat", true}};
    } else {
        try {
            const HolonomyDecay d = holonomy_decay(jacs, m_max);
            report["decay"] = decay_fit_to_json(d.fit);
            report["envelope"] = d.envelope;
            pass = pass && d.fit.theta < 1.0 && d.fit.r2 >= r2_min;
        } catch (const std::invalid_argument& e) {
            report["decay"] = {{"error", e.what()}};
            pass = false;
        }
    }
    report["pass"] = pass;
    res.files["holonomy_report.json"] = json_document(rc, report);
    if (!pass) {
        res.exit_code = kExitProperty;
        res.messages.push_back("holonomy: no certified geometric decay of ln Jh");
    }
    return res;
}

CommandResult cmd_couple(const RunConfig& rc)
{
    CommandResult res;
    CurveParams base;
    base.ell = 0.2;
    base.L = 0.5;
    const CurveParams cp = curve_params_from_json(section(rc.config, "curve"), base);
    CouplingConfig cc = coupling_config_from_json(section(rc.config, "couple"), cp);
    cc.threads = rc.threads;
    cc.seed = rc.seed;
    const json& fj = section(rc.config, "families");
    check_keys(fj, {"g", "e"}, "families");
    FamilySpec gs = family_spec_from_json(fj.value("g", json::object()), "families.g", rc.seed);
    json ed = fj.value("e", json::object());
    if (!ed.contains("density_slope")) ed["density_slope"] = 2.0;
    FamilySpec es = family_spec_from_json(ed, "families.e", rc.seed + 1);

    const MapSequence seq = load_sequence(rc);
    const ValidationReport rep = run_validation(rc, seq);
    if (!precheck(rc, rep, res)) return res;
    const LineFieldEvaluator f(seq);
    const CouplingLedger led = run_coupling(f, make_family(seq, gs), make_family(seq, es), cc, rep.constants);

    CsvTable ev({"k", "time", "coupled_mass", "magnet", "remaining", "tau_beta_sup", "drift_g",
                 "drift_e", "quadrature_abs", "separation_ratio"});
    double drift = 0.0, quad = 0.0, sep = 0.0;
    for (const auto& e : led.events) {
        ev.add_row({e.k, e.time, e.coupled_abs, e.magnet, e.remaining_abs, e.tau_beta_sup, e.drift_g,
                    e.drift_e, e.quadrature_abs, e.separation_ratio});
        drift = std::max({drift, e.drift_g, e.drift_e});
        quad = std::max(quad, e.quadrature_abs);
        sep = std::max(sep, e.separation_ratio);
    }
    CsvTable tail({"n", "tail"});
    const auto tl = led.tail();
    for (std::size_t n = 0; n < tl.size(); ++n) tail.add_row({n, tl[n]});
    res.files["events.csv"] = csv_document(rc, ev);
    res.files["tail.csv"] = csv_document(rc, tail);

    bool pass = !led.starved && static_cast<int>(led.events.size()) == cc.max_events &&
                led.geometric_error() <= 1e-12 && drift <= 1e-12 && quad <= 1e-9 && sep <= 1.0;
    if (led.events.size() >= 2) {
        const TailFit tf = led.tail_fit();
        pass = pass && tf.theta < 1.0 && tf.r2 >= 0.9;
    } else {
        pass = false;
    }
    json report = coupling_ledger_to_json(led);
    report["pass"] = pass;
    report["validation_pass"] = rep.pass();
    res.files["ledger.json"] = json_document(rc, report);
    res.messages.push_back("coupling: " + std::to_string(led.events.size()) + " events, end time " +
                           std::to_string(led.end_time));
    if (!pass) {
        res.exit_code = kExitProperty;
        res.messages.push_back(led.starved ? "coupling starved before the requested events"
                                           : "coupling ledger fails its identities or tail fit");
    }
    return res;
}

CommandResult cmd_memloss(const RunConfig& rc)
{
    CommandResult res;
    MemoryLossConfig mc = memory_loss_config_from_json(section(rc.config, "memloss"));
    mc.seed = rc.seed;
    mc.threads = rc.threads;

    const MapSequence seq = load_sequence(rc);
    const ValidationReport rep = run_validation(rc, seq);
    if (!precheck(rc, rep, res)) return res;
    const DecayReport dr = memory_loss_experiment(seq, mc, rep.constants);

    std::vector<std::string> cols = {"n"};
    for (const auto& m : dr.methods) {
        cols.push_back(m.name + "_delta");
        cols.push_back(m.name + "_signed");
        cols.push_back(m.name + "_floor");
        if (!m.stderr_.empty()) cols.push_back(m.name + "_stderr");
    }
    CsvTable t(cols);
    for (int n = 0; n <= mc.n_max; ++n) {
        std::vector<CsvTable::Cell> row = {n};
        for (const auto& m : dr.methods) {
            row.emplace_back(m.delta[n]);
            row.emplace_back(m.signed_delta[n]);
            row.emplace_back(m.floor[n]);
            if (!m.stderr_.empty()) row.emplace_back(m.stderr_[n]);
        }
        t.add_row(std::move(row));
    }
    res.files["decay.csv"] = csv_document(rc, t);
    json report = decay_report_to_json(dr);
    report["validation_pass"] = rep.pass();
    report["densities"] = {trig_poly_to_json(mc.rho1), trig_poly_to_json(mc.rho2)};
    report["observable"] = trig_poly_to_json(mc.f.f);
    res.files["decay_report.json"] = json_document(rc, report);
    res.messages.push_back("memloss: " + dr.verdict);
    if (!dr.pass) res.exit_code = kExitProperty;
    return res;
}

CommandResult run_command(const RunConfig& rc)
{
    try {
        if (rc.command == "validate") return cmd_validate(rc);
        if (rc.command == "fields") return cmd_fields(rc);
        if (rc.command == "evolve") return cmd_evolve(rc);
        if (rc.command == "holonomy") return cmd_holonomy(rc);
        if (rc.command == "couple") return cmd_couple(rc);
        if (rc.command == "memloss") return cmd_memloss(rc);
        CommandResult res;
        res.exit_code = kExitUsage;
        res.messages.push_back("unknown command '" + rc.command + "'");
        return res;
    } catch (const ConfigError& e) {
        CommandResult res;
        res.exit_code = kExitUsage;
        res.messages.push_back(std::string("config error: ") + e.what());
        return res;
    } catch (const json::exception& e) {
        CommandResult res;
        res.exit_code = kExitUsage;
        res.messages.push_back(std::string("config error: ") + e.what());
        return res;
    } catch (const std::invalid_argument& e) {
        CommandResult res;
        res.exit_code = kExitUsage;
        res.messages.push_back(std::string("invalid parameters: ") + e.what());
        return res;
    } catch (const std::exception& e) {
        CommandResult res;
        res.exit_code = kExitProperty;
        res.messages.push_back(std::string("run failed: ") + e.what());
        return res;
    }
}

}  // namespace anosov
