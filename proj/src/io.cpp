#include "anosov/io.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace anosov {

using nlohmann::json;

std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

CsvTable::CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

void CsvTable::add_row(std::vector<Cell> cells)
{
    if (cells.size() != columns_.size())
        throw std::invalid_argument("csv row has " + std::to_string(cells.size()) +
                                    " cells, expected " + std::to_string(columns_.size()));
    std::vector<std::string> row;
    row.reserve(cells.size());
    for (auto& c : cells) row.push_back(std::move(c.text));
    rows_.push_back(std::move(row));
}

std::string CsvTable::body() const
{
    std::string out;
    auto line = [&](const std::vector<std::string>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out += ',';
            out += v[i];
        }
        out += '\n';
    };
    line(columns_);
    for (const auto& r : rows_) line(r);
    return out;
}

json run_config_to_json(const RunConfig& rc)
{
    return {{"command", rc.command},       {"config_path", rc.config_path},
            {"seed", rc.seed},             {"out", rc.out_dir},
            {"threads", rc.threads},       {"force", rc.force},
            {"overrides", rc.overrides},   {"config", rc.config}};
}

std::string csv_header(const RunConfig& rc)
{
    std::string h = "# schema_version: " + std::to_string(kSchemaVersion) + "\n";
    h += "# command: " + rc.command + "\n";
    h += "# run: " + run_config_to_json(rc).dump() + "\n";
    if (rc.stamp) h += "# stamp: " + rc.timestamp + "\n";
    return h;
}

std::string csv_document(const RunConfig& rc, const CsvTable& t) { return csv_header(rc) + t.body(); }

std::string json_document(const RunConfig& rc, const json& report)
{
    json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["run"] = run_config_to_json(rc);
    if (rc.stamp) doc["stamp"] = rc.timestamp;
    doc["report"] = report;
    return doc.dump(2) + "\n";
}

namespace {

const std::vector<std::string> kTopLevel = {
    "schema_version", "description", "seed",     "sequence", "validation", "fields", "curve",
    "family",         "evolve",      "holonomy", "couple",   "families",   "memloss"};

std::string line_col(const std::string& text, std::size_t byte)
{
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

// "[json.exception.type_error.302] (/a/b) type must be number" -> "/a/b: type must be number"
std::string json_error_text(const std::exception& e)
{
    std::string s = e.what();
    const auto close = s.find("] ");
    if (close != std::string::npos) s = s.substr(close + 2);
    if (!s.empty() && s.front() == '(') {
        const auto end = s.find(") ");
        if (end != std::string::npos) s = "field " + s.substr(1, end - 1) + ": " + s.substr(end + 2);
    }
    return s;
}

template <class F>
auto guarded(const std::string& where, F&& fn) -> decltype(fn())
{
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const json::exception& e) {
        throw ConfigError(where + ": " + json_error_text(e));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

const json& section(const json& cfg, const char* key)
{
    static const json empty = json::object();
    if (!cfg.contains(key)) return empty;
    const json& s = cfg.at(key);
    if (!s.is_object()) throw ConfigError(std::string("field '") + key + "': expected an object");
    return s;
}

}  // namespace

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where)
{
    if (!j.is_object()) throw ConfigError("field '" + where + "': expected an object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const auto& a : allowed) ok = ok || a == k;
        if (!ok) throw ConfigError("unknown field '" + (where.empty() ? k : where + "." + k) + "'");
    }
}

json parse_config_text(const std::string& text, const std::string& origin)
{
    json cfg;
    try {
        cfg = json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        std::string msg = e.what();
        const auto colon = msg.find("syntax error");
        if (colon != std::string::npos) msg = msg.substr(colon);
        throw ConfigError(origin + ": " + line_col(text, e.byte == 0 ? 0 : e.byte - 1) + ": " + msg);
    }
    if (!cfg.is_object()) throw ConfigError(origin + ": top level must be an object");
    if (!cfg.contains("schema_version"))
        throw ConfigError(origin + ": missing field 'schema_version'");
    const json& v = cfg.at("schema_version");
    if (!v.is_number_integer() || v.get<int>() != kSchemaVersion)
        throw ConfigError(origin + ": field 'schema_version': expected " +
                          std::to_string(kSchemaVersion) + ", got " + v.dump());
    try {
        check_keys(cfg, kTopLevel, "");
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return cfg;
}

json load_config_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

void apply_override(json& cfg, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "': expected path=value");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &cfg;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ConfigError("override '" + assignment + "': empty path component");
        if (node->is_array()) {
            std::size_t idx = 0;
            try {
                idx = std::stoul(part);
            } catch (const std::exception&) {
                throw ConfigError("override '" + assignment + "': '" + part + "' is not an index");
            }
            if (idx >= node->size())
                throw ConfigError("override '" + assignment + "': index " + part + " out of range");
            node = &(*node)[idx];
        } else {
            if (node->is_null()) *node = json::object();
            if (!node->is_object())
                throw ConfigError("override '" + assignment + "': '" + part + "' is inside a scalar");
            node = &(*node)[part];
        }
    }
    *node = value;
    if (path != "schema_version") check_keys(cfg, kTopLevel, "");
}

TrigPoly trig_poly_from_json(const json& j, const std::string& where)
{
    return guarded(where, [&] {
        check_keys(j, {"c0", "terms"}, where);
        TrigPoly p;
        p.c0 = j.value("c0", 0.0);
        if (j.contains("terms")) {
            std::size_t i = 0;
            for (const auto& t : j.at("terms")) {
                const std::string w = where + ".terms." + std::to_string(i++);
                check_keys(t, {"k", "a", "b"}, w);
                TrigTerm tt;
                const auto& k = t.at("k");
                if (!k.is_array() || k.size() != 2)
                    throw ConfigError("field '" + w + ".k': expected [kx, ky]");
                tt.kx = k.at(0).get<int>();
                tt.ky = k.at(1).get<int>();
                if (tt.kx == 0 && tt.ky == 0)
                    throw ConfigError("field '" + w + ".k': zero frequency belongs in c0");
                tt.a = t.value("a", 0.0);
                tt.b = t.value("b", 0.0);
                p.terms.push_back(tt);
            }
        }
        return p;
    });
}

json trig_poly_to_json(const TrigPoly& p)
{
    json terms = json::array();
    for (const auto& t : p.terms) terms.push_back({{"k", {t.kx, t.ky}}, {"a", t.a}, {"b", t.b}});
    return {{"c0", p.c0}, {"terms", terms}};
}

SequenceSpec sequence_from_config(const json& cfg)
{
    if (!cfg.contains("sequence")) throw ConfigError("missing field 'sequence'");
    const json& s = section(cfg, "sequence");
    return guarded("sequence", [&] {
        check_keys(s, {"seed", "grid", "guides"}, "sequence");
        if (!s.contains("guides") || !s.at("guides").is_array())
            throw ConfigError("field 'sequence.guides': expected an array");
        std::size_t i = 0;
        for (const auto& g : s.at("guides")) {
            const std::string w = "sequence.guides." + std::to_string(i++);
            check_keys(g, {"A", "epsilon", "modes", "radius", "min_dwell", "length", "cone", "generator"},
                       w);
            if (!g.contains("length")) throw ConfigError("missing field '" + w + ".length'");
            if (!g.contains("A")) throw ConfigError("missing field '" + w + ".A'");
            if (g.contains("cone")) check_keys(g.at("cone"), {"unstable", "stable"}, w + ".cone");
            if (g.contains("generator"))
                check_keys(g.at("generator"), {"kind", "modes", "amplitude", "amplitude_end", "step"},
                           w + ".generator");
        }
        return sequence_spec_from_json(s);
    });
}

ValidationOptions validation_options_from_json(const json& j)
{
    return guarded("validation", [&] {
        check_keys(j, {"grid", "directions", "constant_grid", "transient", "safety"}, "validation");
        ValidationOptions o;
        o.grid = j.value("grid", o.grid);
        o.directions = j.value("directions", o.directions);
        o.constant_grid = j.value("constant_grid", o.constant_grid);
        o.transient = j.value("transient", o.transient);
        o.safety = j.value("safety", o.safety);
        return o;
    });
}

FieldPolicy field_policy_from_json(const json& j)
{
    return guarded("fields.policy", [&] {
        check_keys(j, {"tol", "depth_start", "depth_step", "depth_max"}, "fields.policy");
        FieldPolicy p;
        p.tol = j.value("tol", p.tol);
        p.depth_start = j.value("depth_start", p.depth_start);
        p.depth_step = j.value("depth_step", p.depth_step);
        p.depth_max = j.value("depth_max", p.depth_max);
        return p;
    });
}

CurveParams curve_params_from_json(const json& j, CurveParams p)
{
    return guarded("curve", [&] {
        check_keys(j, {"h_max", "h_min", "ell", "L", "K", "eta_r", "c_r", "check_cone"}, "curve");
        p.h_max = j.value("h_max", p.h_max);
        p.h_min = j.value("h_min", p.h_min);
        p.ell = j.value("ell", p.ell);
        p.L = j.value("L", p.L);
        p.K = j.value("K", p.K);
        p.eta_r = j.value("eta_r", p.eta_r);
        p.c_r = j.value("c_r", p.c_r);
        p.check_cone = j.value("check_cone", p.check_cone);
        if (!(p.h_min > 0 && p.h_min < p.h_max)) throw ConfigError("field 'curve': need 0 < h_min < h_max");
        if (!(p.ell > 0 && p.ell < p.L)) throw ConfigError("field 'curve': need 0 < ell < L");
        return p;
    });
}

CouplingConfig coupling_config_from_json(const json& j, const CurveParams& curve)
{
    return guarded("couple", [&] {
        check_keys(j,
                   {"ell0", "max_pairs", "cap_seed", "probe_from", "probe_len", "d0_factor", "d0",
                    "r0", "r0_cap", "wait_cap", "max_events", "n_max", "holonomy_samples",
                    "tau_beta_max", "test_sets", "separation_samples", "separation_depth", "magnet"},
                   "couple");
        CouplingConfig c;
        c.curve = curve;
        c.ell0 = j.value("ell0", c.ell0);
        c.cap.max_pairs = j.value("max_pairs", c.cap.max_pairs);
        c.cap.seed = j.value("cap_seed", c.cap.seed);
        c.probe_from = j.value("probe_from", c.probe_from);
        c.probe_len = j.value("probe_len", c.probe_len);
        c.d0_factor = j.value("d0_factor", c.d0_factor);
        c.d0 = j.value("d0", c.d0);
        c.r0 = j.value("r0", c.r0);
        c.r0_cap = j.value("r0_cap", c.r0_cap);
        c.wait_cap = j.value("wait_cap", c.wait_cap);
        c.max_events = j.value("max_events", c.max_events);
        c.n_max = j.value("n_max", c.n_max);
        c.holonomy_samples = j.value("holonomy_samples", c.holonomy_samples);
        c.tau_beta_max = j.value("tau_beta_max", c.tau_beta_max);
        c.test_sets = j.value("test_sets", c.test_sets);
        c.separation_samples = j.value("separation_samples", c.separation_samples);
        c.separation_depth = j.value("separation_depth", c.separation_depth);
        if (j.contains("magnet")) {
            const auto& m = j.at("magnet");
            check_keys(m, {"centers", "u_factor", "s_factor"}, "couple.magnet");
            if (m.contains("centers")) {
                c.magnet.centers.clear();
                for (const auto& p : m.at("centers"))
                    c.magnet.centers.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
            }
            c.magnet.u_factor = m.value("u_factor", c.magnet.u_factor);
            c.magnet.s_factor = m.value("s_factor", c.magnet.s_factor);
        }
        if (c.max_events < 1) throw ConfigError("field 'couple.max_events': must be positive");
        return c;
    });
}

MemoryLossConfig memory_loss_config_from_json(const json& j)
{
    return guarded("memloss", [&] {
        check_keys(j,
                   {"rho1", "rho2", "f", "gamma", "holder", "n_max", "methods", "mc_samples",
                    "ulam_n", "ulam_sub", "slices", "order", "panels", "phase_per_panel",
                    "floor_factor", "min_points", "r2_min"},
                   "memloss");
        MemoryLossConfig c;
        for (const char* k : {"rho1", "rho2", "f"})
            if (!j.contains(k)) throw ConfigError(std::string("missing field 'memloss.") + k + "'");
        c.rho1 = trig_poly_from_json(j.at("rho1"), "memloss.rho1");
        c.rho2 = trig_poly_from_json(j.at("rho2"), "memloss.rho2");
        c.f.f = trig_poly_from_json(j.at("f"), "memloss.f");
        try {
            check_density(c.rho1);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("field 'memloss.rho1': ") + e.what());
        }
        try {
            check_density(c.rho2);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("field 'memloss.rho2': ") + e.what());
        }
        c.f.gamma = j.value("gamma", c.f.gamma);
        c.f.holder = j.value("holder", c.f.holder);
        c.n_max = j.value("n_max", c.n_max);
        if (j.contains("methods")) {
            c.use_mc = c.use_family = c.use_ulam = false;
            for (const auto& m : j.at("methods")) {
                const auto s = m.get<std::string>();
                if (s == "mc") c.use_mc = true;
                else if (s == "family") c.use_family = true;
                else if (s == "ulam") c.use_ulam = true;
                else throw ConfigError("field 'memloss.methods': unknown method '" + s + "'");
            }
        }
        c.mc_samples = j.value("mc_samples", c.mc_samples);
        c.ulam_n = j.value("ulam_n", c.ulam_n);
        c.ulam_sub = j.value("ulam_sub", c.ulam_sub);
        c.slices.slices = j.value("slices", c.slices.slices);
        c.slices.order = j.value("order", c.slices.order);
        c.slices.panels = j.value("panels", c.slices.panels);
        c.slices.phase_per_panel = j.value("phase_per_panel", c.slices.phase_per_panel);
        c.floor_factor = j.value("floor_factor", c.floor_factor);
        c.min_points = j.value("min_points", c.min_points);
        c.r2_min = j.value("r2_min", c.r2_min);
        if (c.n_max < 1) throw ConfigError("field 'memloss.n_max': must be positive");
        if (c.use_ulam && (c.ulam_n < 2 || c.ulam_n > 1024))
            throw ConfigError("field 'memloss.ulam_n': must lie in [2, 1024]");
        return c;
    });
}

FamilySpec family_spec_from_json(const json& j, const std::string& where, std::uint64_t default_seed)
{
    return guarded(where, [&] {
        check_keys(j, {"count", "length", "h", "density_slope", "seed", "time"}, where);
        FamilySpec f;
        f.seed = default_seed;
        f.count = j.value("count", f.count);
        f.length = j.value("length", f.length);
        f.h = j.value("h", f.h);
        f.density_slope = j.value("density_slope", f.density_slope);
        f.seed = j.value("seed", f.seed);
        f.time = j.value("time", f.time);
        if (f.count < 1) throw ConfigError("field '" + where + ".count': must be positive");
        if (!(f.length > 0 && f.h > 0 && f.h < f.length))
            throw ConfigError("field '" + where + "': need 0 < h < length");
        return f;
    });
}

StandardFamily make_family(const MapSequence& seq, const FamilySpec& spec)
{
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Vec2 dir = seq.guide(seq.unstable_family(spec.time)).split.unstable.unit();
    StandardFamily fam;
    fam.time = spec.time;
    for (int i = 0; i < spec.count; ++i) {
        const double x = u(rng);
        const double y = u(rng);
        auto p = make_segment_pair(Vec2(x, y), dir, spec.length, spec.h, spec.time);
        const double slope = spec.density_slope;
        if (slope != 0.0) set_density(p, [slope](double s) { return std::exp(slope * s); });
        fam.pairs.push_back(std::move(p));
        fam.weights.push_back(1.0);
    }
    fam.normalize();
    return fam;
}

json decay_fit_to_json(const DecayFit& f)
{
    return {{"C", f.c},         {"theta", f.theta}, {"r2", f.r2},  {"points", f.points},
            {"first", f.first}, {"last", f.last},   {"flat", f.flat}};
}

json decay_report_to_json(const DecayReport& r)
{
    json methods = json::array();
    for (const auto& m : r.methods) {
        json mj = {{"name", m.name},
                   {"delta", m.delta},
                   {"signed_delta", m.signed_delta},
                   {"floor", m.floor},
                   {"window", {m.window_first, m.window_last}},
                   {"fitted", m.fitted}};
        if (!m.stderr_.empty()) mj["stderr"] = m.stderr_;
        if (m.fitted) mj["fit"] = decay_fit_to_json(m.fit);
        if (!m.fit_error.empty()) mj["fit_error"] = m.fit_error;
        methods.push_back(mj);
    }
    json out = {{"pass", r.pass},
                {"verdict", r.verdict},
                {"primary", r.primary >= 0 ? json(r.methods[r.primary].name) : json(nullptr)},
                {"window", {r.window_first, r.window_last}},
                {"agreement", r.agreement},
                {"agree", r.agree},
                {"envelope_ok", r.envelope_ok},
                {"flat", r.flat},
                {"reference_rate", r.reference_rate},
                {"methods", methods}};
    if (r.primary >= 0) out["fit"] = decay_fit_to_json(r.fit);
    return out;
}

json coupling_ledger_to_json(const CouplingLedger& l)
{
    json events = json::array();
    for (const auto& e : l.events) {
        events.push_back({{"k", e.k},
                          {"time", e.time},
                          {"magnet", e.magnet},
                          {"d0", e.d0},
                          {"z_g", e.z_g},
                          {"z_e", e.z_e},
                          {"tau_alpha", e.tau_alpha},
                          {"tau_beta_sup", e.tau_beta_sup},
                          {"target_rescale", e.target_rescale},
                          {"coupled_abs", e.coupled_abs},
                          {"remaining_abs", e.remaining_abs},
                          {"drift_g", e.drift_g},
                          {"drift_e", e.drift_e},
                          {"quadrature_abs", e.quadrature_abs},
                          {"quadrature_rel", e.quadrature_rel},
                          {"components_g", e.components_g},
                          {"components_e", e.components_e},
                          {"skipped", e.skipped},
                          {"recovery", e.recovery},
                          {"recovered", e.recovered},
                          {"holder_after", e.holder_after},
                          {"replicas", e.replicas.size()},
                          {"separation_ratio", e.separation_ratio},
                          {"separation_rate", e.separation_rate}});
    }
    json out = {{"d0", l.d0},
                {"s0", l.s0},
                {"probe_z_g", l.probe_z_g},
                {"probe_z_e", l.probe_z_e},
                {"end_time", l.end_time},
                {"starved", l.starved},
                {"lambda", l.lambda},
                {"aborted", l.aborted},
                {"geometric_error", l.geometric_error()},
                {"events", events}};
    if (l.events.size() >= 2) {
        const TailFit tf = l.tail_fit();
        out["tail_fit"] = {{"theta", tf.theta}, {"r2", tf.r2}, {"points", tf.points}};
    }
    return out;
}

void write_outputs(const std::string& dir, const std::map<std::string, std::string>& files)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (const auto& [name, content] : files) {
        const fs::path target = fs::path(dir) / name;
        const fs::path tmp = fs::path(dir) / (name + ".tmp");
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw std::runtime_error("cannot write " + tmp.string());
            out << content;
            if (!out) throw std::runtime_error("write failed for " + tmp.string());
        }
        fs::rename(tmp, target);
    }
}

std::string utc_timestamp()
{
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace anosov
