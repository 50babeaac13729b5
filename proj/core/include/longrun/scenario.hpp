#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "longrun/model.hpp"

namespace longrun {

/// Parse failure with source position.
class ScenarioParseError : public std::runtime_error {
public:
    ScenarioParseError(const std::string& msg, int line, int column);
    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

/// Consistency failure (dimensions, unknown providers, bad task names).
class ScenarioValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One value of the TOML-compatible surface syntax: number, boolean,
/// string, or (arbitrarily nested, possibly multiline) array.
struct TomlValue {
    std::variant<double, bool, std::string, std::vector<TomlValue>> data;

    bool is_number() const { return std::holds_alternative<double>(data); }
    bool is_bool() const { return std::holds_alternative<bool>(data); }
    bool is_string() const { return std::holds_alternative<std::string>(data); }
    bool is_array() const { return std::holds_alternative<std::vector<TomlValue>>(data); }
    double number() const { return std::get<double>(data); }
    const std::string& str() const { return std::get<std::string>(data); }
    const std::vector<TomlValue>& array() const {
        return std::get<std::vector<TomlValue>>(data);
    }
};

/// Flat "section.key" -> value document.
class ScenarioDoc {
public:
    static ScenarioDoc parse_file(const std::string& path);
    static ScenarioDoc parse_string(const std::string& text);

    bool has(const std::string& key) const { return entries_.count(key) > 0; }
    const TomlValue* find(const std::string& key) const;
    const std::map<std::string, TomlValue>& entries() const { return entries_; }
    /// Inserts or replaces one entry; `text` is parsed as a value (the
    /// --override key=value mechanism).
    void set(const std::string& key, const std::string& text);

private:
    std::map<std::string, TomlValue> entries_;
};

/// Market coefficient configuration: a constant matrix or one of the
/// named builtin bounded state-dependent families.
struct ProviderConfig {
    std::string kind = "constant";  // constant | norm_saturating | norm_decay
    Eigen::MatrixXd value;          // constant value or builtin base matrix
    double scale = 0.0;             // builtin modulation strength
};

std::vector<std::string> builtin_provider_names();
MatrixProvider make_provider(const ProviderConfig& config);

/// Typed scenario configuration (one file, one model, an ordered task list).
struct Scenario {
    // model
    int d = 1;
    int n = 1;
    double p = -1.0;
    Eigen::MatrixXd K, L, Lambda;
    // market
    double r0 = 0.0;
    Eigen::MatrixXd r1;
    ProviderConfig zeta, nu, rho;

    struct PdeSection {
        std::string mode = "d1";  // d1 | d2
        double x_min = 1e-3, x_max = 20.0;
        int nx = 400, nz = 48, nc = 24;
        double c_max = 0.9;
        double T = 10.0, dt = 1e-3;
        std::vector<double> snapshots;
        double box_lo = 0.5, box_hi = 5.0, box_c = 0.5;
    } pde;

    struct RiccatiSection {
        double T = 50.0;
        double dt = 1e-3;
    } riccati;

    struct SimSection {
        long n_paths = 10000;
        double dt = 1e-3;
        double T = 1.0;
        double t_window = 1.0;
        std::vector<double> T_list = {2.0, 5.0, 10.0, 20.0};
        std::uint64_t master_seed = 12345;
        double x0 = 1.0;  // initial state x0 * identity
    } sim;

    bool strict_correlation = false;
    std::vector<std::string> tasks;

    static Scenario from_doc(const ScenarioDoc& doc);
    static Scenario from_file(const std::string& path);

    ModelSpec build_spec() const;
    /// Normalized serialization; parsing it back yields an identical run.
    std::string canonical_toml() const;
};

/// FNV-1a hash of the canonical serialization, for report provenance.
std::uint64_t scenario_hash(const Scenario& scenario);

}  // namespace longrun
