#pragma once

// Run configuration, config-file readers and deterministic text output.

#include "anosov/coupling.hpp"
#include "anosov/experiments.hpp"

#include "json.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace anosov {

inline constexpr int kSchemaVersion = 1;

/// Malformed configuration. The message names the line and column (syntax) or
/// the field path (content).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Fixed 17-significant-digit decimal ("%.17g").
std::string format_double(double v);

class CsvTable {
public:
    struct Cell {
        std::string text;
        Cell(double v) : text(format_double(v)) {}
        Cell(int v) : text(std::to_string(v)) {}
        Cell(long v) : text(std::to_string(v)) {}
        Cell(long long v) : text(std::to_string(v)) {}
        Cell(unsigned long v) : text(std::to_string(v)) {}
        Cell(bool v) : text(v ? "1" : "0") {}
        Cell(const char* v) : text(v) {}
        Cell(std::string v) : text(std::move(v)) {}
    };

    explicit CsvTable(std::vector<std::string> columns);
    /// Throws std::invalid_argument on a column-count mismatch.
    void add_row(std::vector<Cell> cells);
    std::size_t rows() const { return rows_.size(); }
    const std::vector<std::string>& columns() const { return columns_; }
    /// Column line plus rows, '\n' terminated.
    std::string body() const;

private:
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
};

struct RunConfig {
    std::string command;
    std::string config_path;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    int threads = 1;
    bool force = false;
    bool stamp = false;
    /// "dotted.path=json-value" assignments applied after loading.
    std::vector<std::string> overrides;
    /// Config document after overrides.
    nlohmann::json config;
    /// UTC time, only filled (and written) with --stamp.
    std::string timestamp;
};

nlohmann::json run_config_to_json(const RunConfig& rc);

/// '#'-prefixed lines: schema version, command, the serialized run config and
/// the timestamp when stamping is on.
std::string csv_header(const RunConfig& rc);
std::string csv_document(const RunConfig& rc, const CsvTable& t);
/// {"schema_version", "run", ["stamp"], "report"}, two-space indentation.
std::string json_document(const RunConfig& rc, const nlohmann::json& report);

/// Parses a config document and checks the schema version and top-level keys.
/// `origin` prefixes diagnostics (usually the file path).
nlohmann::json parse_config_text(const std::string& text, const std::string& origin);
nlohmann::json load_config_file(const std::string& path);
/// Sets the field at a dotted path ("memloss.n_max=6", array indices allowed);
/// the value is parsed as JSON, or taken as a string if that fails.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

/// Throws ConfigError naming `where.key` for keys outside `allowed`.
void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                const std::string& where);

/// {"c0": 1, "terms": [{"k": [1, 0], "a": 0.4, "b": 0}]}
TrigPoly trig_poly_from_json(const nlohmann::json& j, const std::string& where);
nlohmann::json trig_poly_to_json(const TrigPoly& p);

SequenceSpec sequence_from_config(const nlohmann::json& cfg);
ValidationOptions validation_options_from_json(const nlohmann::json& j);
FieldPolicy field_policy_from_json(const nlohmann::json& j);
CurveParams curve_params_from_json(const nlohmann::json& j, CurveParams base = {});
CouplingConfig coupling_config_from_json(const nlohmann::json& j, const CurveParams& curve);
/// Reads "memloss"; seed and threads come from the run.
MemoryLossConfig memory_loss_config_from_json(const nlohmann::json& j);

/// Straight segments along the unstable eigendirection of the guide in force
/// at `time`, centres uniform on the torus, density proportional to
/// exp(density_slope * s).
struct FamilySpec {
    int count = 40;
    double length = 0.3;
    double h = 1e-3;
    double density_slope = 0.0;
    std::uint64_t seed = 1;
    long time = 0;
};
FamilySpec family_spec_from_json(const nlohmann::json& j, const std::string& where,
                                 std::uint64_t default_seed);
StandardFamily make_family(const MapSequence& seq, const FamilySpec& spec);

nlohmann::json decay_fit_to_json(const DecayFit& f);
nlohmann::json decay_report_to_json(const DecayReport& r);
nlohmann::json coupling_ledger_to_json(const CouplingLedger& l);

/// Writes every file (name -> content) under dir, creating it; each file goes
/// through a temporary and a rename.
void write_outputs(const std::string& dir, const std::map<std::string, std::string>& files);

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

}  // namespace anosov
