#include "longrun/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace longrun {

ScenarioParseError::ScenarioParseError(const std::string& msg, int line, int column)
    : std::runtime_error("parse error at line " + std::to_string(line) + ", column " +
                         std::to_string(column) + ": " + msg),
      line_(line),
      column_(column) {}

namespace {

// Character-stream parser for the TOML-compatible surface syntax:
// [section] headers, key = value lines, #-comments, values being numbers,
// booleans, quoted strings, or nested (possibly multiline) arrays.
class Parser {
public:
    explicit Parser(const std::string& text) : text_(text) {}

    std::map<std::string, TomlValue> parse() {
        std::map<std::string, TomlValue> out;
        std::string section;
        skip_blank();
        while (!eof()) {
            if (peek() == '[') {
                section = parse_section();
            } else {
                auto [key, value] = parse_assignment();
                const std::string full = section.empty() ? key : section + "." + key;
                if (out.count(full)) fail("duplicate key '" + full + "'");
                out.emplace(full, std::move(value));
            }
            skip_blank();
        }
        return out;
    }

private:
    bool eof() const { return pos_ >= text_.size(); }
    char peek() const { return text_[pos_]; }
    char get() {
        const char c = text_[pos_++];
        if (c == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        return c;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ScenarioParseError(msg, line_, col_);
    }

    void skip_inline_ws() {
        while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) get();
    }

    void skip_comment() {
        while (!eof() && peek() != '\n') get();
    }

    // whitespace, newlines and comments between statements
    void skip_blank() {
        for (;;) {
            skip_inline_ws();
            if (eof()) return;
            if (peek() == '#') {
                skip_comment();
                continue;
            }
            if (peek() == '\n') {
                get();
                continue;
            }
            return;
        }
    }

    std::string parse_section() {
        get();  // '['
        std::string name;
        while (!eof() && peek() != ']' && peek() != '\n') name.push_back(get());
        if (eof() || peek() != ']') fail("unterminated section header");
        get();
        skip_inline_ws();
        if (!eof() && peek() == '#') skip_comment();
        if (!eof() && peek() == '\n') get();
        else if (!eof()) fail("unexpected text after section header");
        return trim(name);
    }

    std::pair<std::string, TomlValue> parse_assignment() {
        std::string key;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) ||
                          peek() == '_' || peek() == '-')) {
            key.push_back(get());
        }
        if (key.empty()) fail("expected a key");
        skip_inline_ws();
        if (eof() || peek() != '=') fail("expected '=' after key '" + key + "'");
        get();
        skip_inline_ws();
        TomlValue value = parse_value();
        skip_inline_ws();
        if (!eof() && peek() == '#') skip_comment();
        if (!eof() && peek() != '\n') fail("unexpected text after value of '" + key + "'");
        return {key, std::move(value)};
    }

    TomlValue parse_value() {
        if (eof()) fail("expected a value");
        const char c = peek();
        if (c == '[') return parse_array();
        if (c == '"') return parse_quoted();
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' ||
            c == '.') {
            return parse_number();
        }
        return parse_bareword();
    }

    TomlValue parse_array() {
        get();  // '['
        std::vector<TomlValue> items;
        for (;;) {
            skip_array_blank();
            if (eof()) fail("unterminated array");
            if (peek() == ']') {
                get();
                break;
            }
            items.push_back(parse_value());
            skip_array_blank();
            if (eof()) fail("unterminated array");
            if (peek() == ',') {
                get();
                continue;
            }
            if (peek() == ']') {
                get();
                break;
            }
            fail("expected ',' or ']' in array");
        }
        return TomlValue{std::move(items)};
    }

    // inside arrays newlines and comments are plain whitespace
    void skip_array_blank() {
        for (;;) {
            skip_inline_ws();
            if (!eof() && peek() == '#') {
                skip_comment();
                continue;
            }
            if (!eof() && peek() == '\n') {
                get();
                continue;
            }
            return;
        }
    }

    TomlValue parse_quoted() {
        get();  // '"'
        std::string s;
        while (!eof() && peek() != '"' && peek() != '\n') s.push_back(get());
        if (eof() || peek() != '"') fail("unterminated string");
        get();
        return TomlValue{s};
    }

    TomlValue parse_number() {
        std::string s;
        while (!eof() && (std::isdigit(static_cast<unsigned char>(peek())) ||
                          peek() == '-' || peek() == '+' || peek() == '.' ||
                          peek() == 'e' || peek() == 'E' || peek() == '_')) {
            const char c = get();
            if (c != '_') s.push_back(c);
        }
        try {
            size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) fail("malformed number '" + s + "'");
            return TomlValue{v};
        } catch (const std::exception&) {
            fail("malformed number '" + s + "'");
        }
    }

    TomlValue parse_bareword() {
        std::string s;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) ||
                          peek() == '_')) {
            s.push_back(get());
        }
        if (s == "true") return TomlValue{true};
        if (s == "false") return TomlValue{false};
        fail("unrecognized value '" + s + "' (quote strings)");
    }

    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t");
        size_t b = s.find_last_not_of(" \t");
        if (a == std::string::npos) return "";
        return s.substr(a, b - a + 1);
    }

    const std::string& text_;
    size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
};

Eigen::MatrixXd to_matrix(const TomlValue& v, const std::string& key, int rows,
                          int cols) {
    if (!v.is_array()) {
        throw ScenarioValidationError(key + ": expected a " + std::to_string(rows) +
                                      "x" + std::to_string(cols) + " array");
    }
    const auto& outer = v.array();
    // accept a flat array for vectors
    const bool nested = !outer.empty() && outer.front().is_array();
    Eigen::MatrixXd m(rows, cols);
    if (!nested) {
        if (static_cast<int>(outer.size()) != rows * cols) {
            throw ScenarioValidationError(
                key + ": expected " + std::to_string(rows * cols) + " entries, got " +
                std::to_string(outer.size()));
        }
        for (int i = 0; i < rows * cols; ++i) {
            if (!outer[i].is_number()) throw ScenarioValidationError(key + ": non-numeric entry");
            m(i / cols, i % cols) = outer[i].number();
        }
        return m;
    }
    if (static_cast<int>(outer.size()) != rows) {
        throw ScenarioValidationError(key + ": expected " + std::to_string(rows) +
                                      " rows, got " + std::to_string(outer.size()));
    }
    for (int i = 0; i < rows; ++i) {
        if (!outer[i].is_array() ||
            static_cast<int>(outer[i].array().size()) != cols) {
            throw ScenarioValidationError(key + ": row " + std::to_string(i) +
                                          " must have " + std::to_string(cols) +
                                          " entries");
        }
        for (int j = 0; j < cols; ++j) {
            const TomlValue& e = outer[i].array()[j];
            if (!e.is_number()) throw ScenarioValidationError(key + ": non-numeric entry");
            m(i, j) = e.number();
        }
    }
    return m;
}

double require_number(const ScenarioDoc& doc, const std::string& key) {
    const TomlValue* v = doc.find(key);
    if (!v || !v->is_number()) {
        throw ScenarioValidationError(key + ": required number missing");
    }
    return v->number();
}

double number_or(const ScenarioDoc& doc, const std::string& key, double fallback) {
    const TomlValue* v = doc.find(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ScenarioValidationError(key + ": expected a number");
    return v->number();
}

std::string string_or(const ScenarioDoc& doc, const std::string& key,
                      const std::string& fallback) {
    const TomlValue* v = doc.find(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ScenarioValidationError(key + ": expected a string");
    return v->str();
}

ProviderConfig parse_provider(const ScenarioDoc& doc, const std::string& key,
                              int rows, int cols) {
    ProviderConfig cfg;
    const TomlValue* v = doc.find(key);
    if (!v) {
        throw ScenarioValidationError(key + ": required provider missing");
    }
    if (v->is_array()) {
        cfg.kind = "constant";
        cfg.value = to_matrix(*v, key, rows, cols);
        return cfg;
    }
    if (!v->is_string()) {
        throw ScenarioValidationError(key + ": expected an array or a provider tag");
    }
    cfg.kind = v->str();
    const auto names = builtin_provider_names();
    if (std::find(names.begin(), names.end(), cfg.kind) == names.end()) {
        std::string all;
        for (const auto& n : names) all += (all.empty() ? "" : ", ") + n;
        throw ScenarioValidationError(key + ": unknown provider '" + cfg.kind +
                                      "'; built-ins: " + all);
    }
    const TomlValue* base = doc.find(key + "_base");
    if (!base) {
        throw ScenarioValidationError(key + "_base: required for provider '" +
                                      cfg.kind + "'");
    }
    cfg.value = to_matrix(*base, key + "_base", rows, cols);
    cfg.scale = number_or(doc, key + "_scale", 1.0);
    return cfg;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string matrix_toml(const Eigen::MatrixXd& m) {
    std::ostringstream oss;
    oss << "[";
    for (int i = 0; i < m.rows(); ++i) {
        oss << "[";
        for (int j = 0; j < m.cols(); ++j) {
            oss << format_double(m(i, j));
            if (j + 1 < m.cols()) oss << ", ";
        }
        oss << "]";
        if (i + 1 < m.rows()) oss << ", ";
    }
    oss << "]";
    return oss.str();
}

void provider_toml(std::ostringstream& oss, const std::string& key,
                   const ProviderConfig& cfg) {
    if (cfg.kind == "constant") {
        oss << key << " = " << matrix_toml(cfg.value) << "\n";
        return;
    }
    oss << key << " = \"" << cfg.kind << "\"\n";
    oss << key << "_base = " << matrix_toml(cfg.value) << "\n";
    oss << key << "_scale = " << format_double(cfg.scale) << "\n";
}

}  // namespace

const TomlValue* ScenarioDoc::find(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

ScenarioDoc ScenarioDoc::parse_string(const std::string& text) {
    ScenarioDoc doc;
    doc.entries_ = Parser(text).parse();
    return doc;
}

ScenarioDoc ScenarioDoc::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ScenarioParseError("cannot open scenario file '" + path + "'", 0, 0);
    }
    std::ostringstream oss;
    oss << in.rdbuf();
    return parse_string(oss.str());
}

void ScenarioDoc::set(const std::string& key, const std::string& text) {
    auto parsed = Parser("value = " + text + "\n").parse();
    entries_[key] = parsed.at("value");
}

std::vector<std::string> builtin_provider_names() {
    return {"norm_saturating", "norm_decay"};
}

MatrixProvider make_provider(const ProviderConfig& config) {
    if (config.kind == "constant") {
        return constant_provider(config.value);
    }
    const Eigen::MatrixXd base = config.value;
    const double scale = config.scale;
    if (config.kind == "norm_saturating") {
        // bounded, smooth: base * (1 + scale ||x|| / (1 + ||x||))
        return [base, scale](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
            const double nx = x.norm();
            return base * (1.0 + scale * nx / (1.0 + nx));
        };
    }
    if (config.kind == "norm_decay") {
        // bounded, decaying: base / (1 + scale ||x||)
        return [base, scale](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
            return base / (1.0 + scale * x.norm());
        };
    }
    throw ScenarioValidationError("unknown provider kind '" + config.kind + "'");
}

Scenario Scenario::from_doc(const ScenarioDoc& doc) {
    Scenario s;
    s.d = static_cast<int>(require_number(doc, "model.d"));
    s.n = static_cast<int>(require_number(doc, "model.n"));
    s.p = require_number(doc, "model.p");
    if (s.d < 1 || s.d > 8) throw ScenarioValidationError("model.d: need 1 <= d <= 8");
    if (s.n < 1) throw ScenarioValidationError("model.n: need n >= 1");
    if (!(s.p < 1.0) || s.p == 0.0) {
        throw ScenarioValidationError("model.p: need p < 1 and p != 0");
    }
    auto model_matrix = [&](const char* key) {
        const TomlValue* v = doc.find(key);
        if (!v) throw ScenarioValidationError(std::string(key) + ": required matrix missing");
        return to_matrix(*v, key, s.d, s.d);
    };
    s.K = model_matrix("model.K");
    s.L = model_matrix("model.L");
    s.Lambda = model_matrix("model.Lambda");

    s.r0 = number_or(doc, "market.r0", 0.0);
    {
        const TomlValue* v = doc.find("market.r1");
        s.r1 = v ? to_matrix(*v, "market.r1", s.d, s.d)
                 : Eigen::MatrixXd::Zero(s.d, s.d);
    }
    s.zeta = parse_provider(doc, "market.zeta", s.n, s.d);
    s.nu = parse_provider(doc, "market.nu", s.n, 1);
    s.rho = parse_provider(doc, "market.rho", s.d, 1);
    if (const TomlValue* c = doc.find("market.corrC")) {
        // the Wishart specialization pins C = identity
        bool ok = c->is_string() && c->str() == "identity";
        if (!ok && c->is_array()) {
            const Eigen::MatrixXd m = to_matrix(*c, "market.corrC", s.d, s.d);
            ok = (m - Eigen::MatrixXd::Identity(s.d, s.d)).norm() == 0.0;
        }
        if (!ok) {
            throw ScenarioValidationError(
                "market.corrC: the Wishart specialization fixes C = identity");
        }
    }

    s.pde.mode = string_or(doc, "pde.mode", s.d == 1 ? "d1" : "d2");
    if (s.pde.mode != "d1" && s.pde.mode != "d2") {
        throw ScenarioValidationError("pde.mode: expected \"d1\" or \"d2\"");
    }
    if ((s.pde.mode == "d1") != (s.d == 1)) {
        throw ScenarioValidationError("pde.mode: inconsistent with model.d");
    }
    s.pde.x_min = number_or(doc, "pde.x_min", s.d == 1 ? 1e-3 : 0.05);
    s.pde.x_max = number_or(doc, "pde.x_max", s.d == 1 ? 20.0 : 6.0);
    s.pde.nx = static_cast<int>(number_or(doc, "pde.nx", s.d == 1 ? 400 : 48));
    s.pde.nz = static_cast<int>(number_or(doc, "pde.nz", 48));
    s.pde.nc = static_cast<int>(number_or(doc, "pde.nc", 24));
    s.pde.c_max = number_or(doc, "pde.c_max", 0.9);
    s.pde.T = number_or(doc, "pde.T", 10.0);
    s.pde.dt = number_or(doc, "pde.dt", s.d == 1 ? 1e-3 : 2e-3);
    s.pde.box_lo = number_or(doc, "pde.box_lo", 0.5);
    s.pde.box_hi = number_or(doc, "pde.box_hi", 5.0);
    s.pde.box_c = number_or(doc, "pde.box_c", 0.5);
    if (const TomlValue* v = doc.find("pde.snapshots")) {
        if (!v->is_array()) throw ScenarioValidationError("pde.snapshots: expected array");
        s.pde.snapshots.clear();
        for (const auto& e : v->array()) {
            if (!e.is_number()) throw ScenarioValidationError("pde.snapshots: non-numeric");
            s.pde.snapshots.push_back(e.number());
        }
    }

    s.riccati.T = number_or(doc, "riccati.T", 50.0);
    s.riccati.dt = number_or(doc, "riccati.dt", 1e-3);

    s.sim.n_paths = static_cast<long>(number_or(doc, "sim.n_paths", 10000));
    s.sim.dt = number_or(doc, "sim.dt", 1e-3);
    s.sim.T = number_or(doc, "sim.T", 1.0);
    s.sim.t_window = number_or(doc, "sim.t_window", 1.0);
    s.sim.master_seed =
        static_cast<std::uint64_t>(number_or(doc, "sim.master_seed", 12345));
    s.sim.x0 = number_or(doc, "sim.x0", 1.0);
    if (const TomlValue* v = doc.find("sim.T_list")) {
        if (!v->is_array()) throw ScenarioValidationError("sim.T_list: expected array");
        s.sim.T_list.clear();
        for (const auto& e : v->array()) {
            if (!e.is_number()) throw ScenarioValidationError("sim.T_list: non-numeric");
            s.sim.T_list.push_back(e.number());
        }
    }

    if (const TomlValue* v = doc.find("check.strict_correlation")) {
        if (!v->is_bool()) {
            throw ScenarioValidationError("check.strict_correlation: expected a boolean");
        }
        s.strict_correlation = std::get<bool>(v->data);
    }

    s.tasks.clear();
    const TomlValue* tasks_value = doc.find("run.tasks");
    if (!tasks_value) tasks_value = doc.find("tasks");
    if (const TomlValue* v = tasks_value) {
        if (!v->is_array()) throw ScenarioValidationError("tasks: expected array");
        for (const auto& e : v->array()) {
            if (!e.is_string()) throw ScenarioValidationError("tasks: expected strings");
            const std::string& t = e.str();
            if (t != "check" && t != "riccati" && t != "pde" && t != "simulate" &&
                t != "counterexample" && t != "report") {
                throw ScenarioValidationError(
                    "tasks: unknown task '" + t +
                    "' (choose from check, riccati, pde, simulate, counterexample, report)");
            }
            s.tasks.push_back(t);
        }
    }
    return s;
}

Scenario Scenario::from_file(const std::string& path) {
    return from_doc(ScenarioDoc::parse_file(path));
}

ModelSpec Scenario::build_spec() const {
    WishartParams w;
    w.d = d;
    w.K = K;
    w.L = L;
    w.Lambda = Lambda;
    MarketParams mk;
    mk.n = n;
    mk.p = p;
    mk.r0 = r0;
    mk.r1 = r1;
    mk.zeta = make_provider(zeta);
    mk.nu = make_provider(nu);
    mk.rho = make_provider(rho);
    return ModelSpec::wishart_model(w, mk);
}

std::string Scenario::canonical_toml() const {
    std::ostringstream oss;
    oss << "[model]\n";
    oss << "d = " << d << "\n";
    oss << "n = " << n << "\n";
    oss << "p = " << format_double(p) << "\n";
    oss << "K = " << matrix_toml(K) << "\n";
    oss << "L = " << matrix_toml(L) << "\n";
    oss << "Lambda = " << matrix_toml(Lambda) << "\n";
    oss << "\n[market]\n";
    oss << "r0 = " << format_double(r0) << "\n";
    oss << "r1 = " << matrix_toml(r1) << "\n";
    provider_toml(oss, "zeta", zeta);
    provider_toml(oss, "nu", nu);
    provider_toml(oss, "rho", rho);
    oss << "\n[check]\n";
    oss << "strict_correlation = " << (strict_correlation ? "true" : "false") << "\n";
    oss << "\n[pde]\n";
    oss << "mode = \"" << pde.mode << "\"\n";
    oss << "x_min = " << format_double(pde.x_min) << "\n";
    oss << "x_max = " << format_double(pde.x_max) << "\n";
    oss << "nx = " << pde.nx << "\n";
    oss << "nz = " << pde.nz << "\n";
    oss << "nc = " << pde.nc << "\n";
    oss << "c_max = " << format_double(pde.c_max) << "\n";
    oss << "T = " << format_double(pde.T) << "\n";
    oss << "dt = " << format_double(pde.dt) << "\n";
    oss << "box_lo = " << format_double(pde.box_lo) << "\n";
    oss << "box_hi = " << format_double(pde.box_hi) << "\n";
    oss << "box_c = " << format_double(pde.box_c) << "\n";
    if (!pde.snapshots.empty()) {
        oss << "snapshots = [";
        for (size_t i = 0; i < pde.snapshots.size(); ++i) {
            oss << format_double(pde.snapshots[i]);
            if (i + 1 < pde.snapshots.size()) oss << ", ";
        }
        oss << "]\n";
    }
    oss << "\n[riccati]\n";
    oss << "T = " << format_double(riccati.T) << "\n";
    oss << "dt = " << format_double(riccati.dt) << "\n";
    oss << "\n[sim]\n";
    oss << "n_paths = " << sim.n_paths << "\n";
    oss << "dt = " << format_double(sim.dt) << "\n";
    oss << "T = " << format_double(sim.T) << "\n";
    oss << "t_window = " << format_double(sim.t_window) << "\n";
    oss << "T_list = [";
    for (size_t i = 0; i < sim.T_list.size(); ++i) {
        oss << format_double(sim.T_list[i]);
        if (i + 1 < sim.T_list.size()) oss << ", ";
    }
    oss << "]\n";
    oss << "master_seed = " << sim.master_seed << "\n";
    oss << "x0 = " << format_double(sim.x0) << "\n";
    oss << "\n[run]\ntasks = [";
    for (size_t i = 0; i < tasks.size(); ++i) {
        oss << "\"" << tasks[i] << "\"";
        if (i + 1 < tasks.size()) oss << ", ";
    }
    oss << "]\n";
    return oss.str();
}

std::uint64_t scenario_hash(const Scenario& scenario) {
    const std::string text = scenario.canonical_toml();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace longrun
