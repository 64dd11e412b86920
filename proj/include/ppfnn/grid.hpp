#pragma once

#include <algorithm>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ppfnn/error.hpp"
#include "ppfnn/log.hpp"

namespace ppfnn {

enum class BusKind { Slack, PV, PQ };

/// Branch model used when assembling the admittance matrix.
///
/// `Series` ignores off-nominal taps and line charging so that the nodal
/// equations agree exactly with the series-only branch-flow formulas.
/// `Pi` keeps both and is only meaningful for the power flow solver.
enum class BranchModel { Series, Pi };

inline std::string_view to_string(BusKind kind) {
    switch (kind) {
    case BusKind::Slack: return "slack";
    case BusKind::PV: return "pv";
    case BusKind::PQ: return "pq";
    }
    return "pq";
}

struct Bus {
    int id = 0;              ///< internal 0-based index
    long long number = 0;    ///< identifier used in the case file
    BusKind kind = BusKind::PQ;
    double p_load_mw = 0.0;  ///< as given in the case file
    double q_load_mvar = 0.0;
    double p_load = 0.0;     ///< p.u. on base_mva
    double q_load = 0.0;
    double v_setpoint = 1.0; ///< p.u., used for slack and PV buses
    double shunt_g = 0.0;    ///< p.u.
    double shunt_b = 0.0;

    bool operator==(const Bus&) const = default;
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;
    double x = 0.0;
    double b_charge = 0.0; ///< total line-charging susceptance
    double tap = 1.0;      ///< off-nominal ratio at the from end
    double g_series = 0.0; ///< r / (r^2 + x^2)
    double b_series = 0.0; ///< -x / (r^2 + x^2)

    bool operator==(const Branch&) const = default;
};

struct Generator {
    int bus = 0;
    double p_mw = 0.0;
    double q_mvar = 0.0;
    double p_gen = 0.0; ///< p.u.
    double q_gen = 0.0;

    bool operator==(const Generator&) const = default;
};

/// Builds a branch and derives its series admittance pair.
inline Branch make_branch(int from, int to, double r, double x, double b_charge = 0.0, double tap = 1.0) {
    Branch br{from, to, r, x, b_charge, tap, 0.0, 0.0};
    const double z2 = r * r + x * x;
    if (z2 > 0.0) {
        br.g_series = r / z2;
        br.b_series = -x / z2;
    }
    return br;
}

struct NetworkCase {
    std::string name;
    double base_mva = 100.0;
    BranchModel model = BranchModel::Series;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> generators;

    int n_bus() const { return static_cast<int>(buses.size()); }
    int n_branch() const { return static_cast<int>(branches.size()); }

    int slack() const {
        for (const auto& b : buses)
            if (b.kind == BusKind::Slack) return b.id;
        throw CaseError("case has no slack bus");
    }

    /// Tap ratio actually applied under the active branch model.
    double effective_tap(const Branch& br) const { return model == BranchModel::Series ? 1.0 : br.tap; }
    double effective_charging(const Branch& br) const {
        return model == BranchModel::Series ? 0.0 : br.b_charge;
    }

    bool operator==(const NetworkCase&) const = default;
};

/// Throws CaseError naming the first violated invariant.
inline void validate(const NetworkCase& c) {
    const int n = c.n_bus();
    if (n == 0) throw CaseError("case has no buses");
    if (!(c.base_mva > 0.0)) throw CaseError("base_mva must be positive");

    int slacks = 0;
    for (int i = 0; i < n; ++i) {
        const Bus& b = c.buses[i];
        if (b.id != i) throw CaseError("bus ids must be dense 0-based indices");
        if (b.kind == BusKind::Slack) ++slacks;
        if (b.kind != BusKind::PQ && !(b.v_setpoint > 0.0))
            throw CaseError("bus " + std::to_string(b.number) + ": v_setpoint must be > 0 for slack and PV buses");
    }
    if (slacks == 0) throw CaseError("missing slack bus");
    if (slacks > 1) throw CaseError("multiple slack buses");

    for (std::size_t k = 0; k < c.branches.size(); ++k) {
        const Branch& br = c.branches[k];
        const std::string tag = "branch " + std::to_string(k);
        if (br.from_bus < 0 || br.from_bus >= n || br.to_bus < 0 || br.to_bus >= n)
            throw CaseError(tag + ": dangling branch endpoint");
        if (br.from_bus == br.to_bus) throw CaseError(tag + ": from and to bus are identical");
        if (!(br.r * br.r + br.x * br.x > 0.0)) throw CaseError(tag + ": zero impedance");
        if (!(br.tap > 0.0)) throw CaseError(tag + ": tap ratio must be positive");
    }
    for (const auto& g : c.generators)
        if (g.bus < 0 || g.bus >= n) throw CaseError("generator references a missing bus");

    std::vector<std::vector<int>> adj(n);
    for (const auto& br : c.branches) {
        adj[br.from_bus].push_back(br.to_bus);
        adj[br.to_bus].push_back(br.from_bus);
    }
    std::vector<char> seen(n, 0);
    std::queue<int> todo;
    todo.push(0);
    seen[0] = 1;
    int reached = 1;
    while (!todo.empty()) {
        const int u = todo.front();
        todo.pop();
        for (int v : adj[u])
            if (!seen[v]) {
                seen[v] = 1;
                ++reached;
                todo.push(v);
            }
    }
    if (reached != n) throw CaseError("disconnected network: " + std::to_string(n - reached) + " buses unreachable");
}

struct ParseOptions {
    BranchModel model = BranchModel::Series;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

template <typename T>
T field(const nlohmann::json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw CaseError(where + ": missing field '" + key + "'");
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw CaseError(where + ": field '" + key + "' has the wrong type");
    }
}

template <typename T>
T field_or(const nlohmann::json& obj, const char* key, T fallback, const std::string& where) {
    return obj.contains(key) ? field<T>(obj, key, where) : fallback;
}

inline BusKind parse_kind(std::string s, const std::string& where) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (s == "slack" || s == "ref") return BusKind::Slack;
    if (s == "pv") return BusKind::PV;
    if (s == "pq") return BusKind::PQ;
    throw CaseError(where + ": unknown bus kind '" + s + "'");
}

inline nlohmann::json parse_json(std::string_view text) {
    try {
        return nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ParseError(std::string("syntax error: ") + e.what(), line, col);
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file", path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing", path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed", path.string());
}

} // namespace detail

/// Parses a JSON case document and returns a validated case in per-unit.
inline NetworkCase parse_case(std::string_view text, const ParseOptions& options = {}) {
    const nlohmann::json doc = detail::parse_json(text);
    if (!doc.is_object()) throw ParseError("case document must be a JSON object", 1, 1);

    NetworkCase c;
    c.model = options.model;
    c.name = detail::field_or<std::string>(doc, "name", "", "case");
    c.base_mva = detail::field_or<double>(doc, "base_mva", 100.0, "case");
    if (!(c.base_mva > 0.0)) throw CaseError("base_mva must be positive");

    const auto& jbuses = doc.contains("buses") ? doc.at("buses") : throw CaseError("case: missing field 'buses'");
    if (!jbuses.is_array()) throw CaseError("case: 'buses' must be an array");

    std::unordered_map<long long, int> index;
    for (std::size_t i = 0; i < jbuses.size(); ++i) {
        const auto& jb = jbuses[i];
        const std::string where = "buses[" + std::to_string(i) + "]";
        Bus b;
        b.id = static_cast<int>(i);
        b.number = detail::field<long long>(jb, "id", where);
        b.kind = detail::parse_kind(detail::field<std::string>(jb, "kind", where), where);
        b.p_load_mw = detail::field_or<double>(jb, "p_load_mw", 0.0, where);
        b.q_load_mvar = detail::field_or<double>(jb, "q_load_mvar", 0.0, where);
        b.v_setpoint = detail::field_or<double>(jb, "v_setpoint", 1.0, where);
        b.shunt_g = detail::field_or<double>(jb, "shunt_g", 0.0, where);
        b.shunt_b = detail::field_or<double>(jb, "shunt_b", 0.0, where);
        b.p_load = b.p_load_mw / c.base_mva;
        b.q_load = b.q_load_mvar / c.base_mva;
        if (!index.emplace(b.number, b.id).second)
            throw CaseError(where + ": duplicate bus id " + std::to_string(b.number));
        c.buses.push_back(b);
    }

    auto lookup = [&](long long number, const std::string& where) {
        auto it = index.find(number);
        if (it == index.end()) throw CaseError(where + ": dangling reference to bus " + std::to_string(number));
        return it->second;
    };

    if (doc.contains("branches")) {
        const auto& jbr = doc.at("branches");
        if (!jbr.is_array()) throw CaseError("case: 'branches' must be an array");
        int dropped_taps = 0, dropped_charging = 0;
        for (std::size_t k = 0; k < jbr.size(); ++k) {
            const auto& j = jbr[k];
            const std::string where = "branches[" + std::to_string(k) + "]";
            const int from = lookup(detail::field<long long>(j, "from", where), where);
            const int to = lookup(detail::field<long long>(j, "to", where), where);
            Branch br = make_branch(from, to, detail::field<double>(j, "r", where), detail::field<double>(j, "x", where),
                                    detail::field_or<double>(j, "b_charge", 0.0, where),
                                    detail::field_or<double>(j, "tap", 1.0, where));
            if (br.tap == 0.0) br.tap = 1.0;
            dropped_taps += br.tap != 1.0;
            dropped_charging += br.b_charge != 0.0;
            c.branches.push_back(br);
        }
        if (c.model == BranchModel::Series && (dropped_taps > 0 || dropped_charging > 0))
            log_warning("series branch model: ignoring " + std::to_string(dropped_taps) + " off-nominal taps and " +
                        std::to_string(dropped_charging) + " line-charging values");
    }

    if (doc.contains("gens")) {
        const auto& jg = doc.at("gens");
        if (!jg.is_array()) throw CaseError("case: 'gens' must be an array");
        for (std::size_t k = 0; k < jg.size(); ++k) {
            const std::string where = "gens[" + std::to_string(k) + "]";
            Generator g;
            g.bus = lookup(detail::field<long long>(jg[k], "bus", where), where);
            g.p_mw = detail::field_or<double>(jg[k], "p_mw", 0.0, where);
            g.q_mvar = detail::field_or<double>(jg[k], "q_mvar", 0.0, where);
            g.p_gen = g.p_mw / c.base_mva;
            g.q_gen = g.q_mvar / c.base_mva;
            c.generators.push_back(g);
        }
    }

    validate(c);
    return c;
}

inline NetworkCase load_case(const std::filesystem::path& path, const ParseOptions& options = {}) {
    NetworkCase c = parse_case(detail::read_file(path), options);
    if (c.name.empty()) c.name = path.stem().string();
    return c;
}

inline nlohmann::ordered_json case_to_json(const NetworkCase& c) {
    nlohmann::ordered_json doc;
    doc["name"] = c.name;
    doc["base_mva"] = c.base_mva;
    auto& buses = doc["buses"] = nlohmann::ordered_json::array();
    for (const auto& b : c.buses)
        buses.push_back({{"id", b.number},
                         {"kind", std::string(to_string(b.kind))},
                         {"p_load_mw", b.p_load_mw},
                         {"q_load_mvar", b.q_load_mvar},
                         {"v_setpoint", b.v_setpoint},
                         {"shunt_g", b.shunt_g},
                         {"shunt_b", b.shunt_b}});
    auto& branches = doc["branches"] = nlohmann::ordered_json::array();
    for (const auto& br : c.branches)
        branches.push_back({{"from", c.buses[br.from_bus].number},
                            {"to", c.buses[br.to_bus].number},
                            {"r", br.r},
                            {"x", br.x},
                            {"b_charge", br.b_charge},
                            {"tap", br.tap}});
    auto& gens = doc["gens"] = nlohmann::ordered_json::array();
    for (const auto& g : c.generators)
        gens.push_back({{"bus", c.buses[g.bus].number}, {"p_mw", g.p_mw}, {"q_mvar", g.q_mvar}});
    return doc;
}

inline std::string serialize_case(const NetworkCase& c) { return case_to_json(c).dump(1); }

/// Net injections known before solving: scheduled generation minus demand.
/// Reactive generation only counts at PQ buses; elsewhere it is a solver output.
struct Injections {
    Eigen::VectorXd p;
    Eigen::VectorXd q;
};

inline Injections nominal_injections(const NetworkCase& c) {
    Injections inj{Eigen::VectorXd::Zero(c.n_bus()), Eigen::VectorXd::Zero(c.n_bus())};
    for (const auto& b : c.buses) {
        inj.p[b.id] -= b.p_load;
        inj.q[b.id] -= b.q_load;
    }
    for (const auto& g : c.generators) {
        inj.p[g.bus] += g.p_gen;
        if (c.buses[g.bus].kind == BusKind::PQ) inj.q[g.bus] += g.q_gen;
    }
    return inj;
}

/// Sparse nodal admittance matrix in compressed-row form with separate G and B arrays.
class AdmittanceMatrix {
public:
    AdmittanceMatrix() = default;

    struct Entry {
        int row;
        int col;
        double g;
        double b;
    };

    /// Duplicate (row, col) entries are summed.
    AdmittanceMatrix(int n, std::vector<Entry> entries) : n_(n), row_ptr_(n + 1, 0) {
        std::sort(entries.begin(), entries.end(),
                  [](const Entry& a, const Entry& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
        for (const auto& e : entries) {
            if (!cols_.empty() && last_row_ == e.row && cols_.back() == e.col) {
                g_.back() += e.g;
                b_.back() += e.b;
                continue;
            }
            cols_.push_back(e.col);
            g_.push_back(e.g);
            b_.push_back(e.b);
            ++row_ptr_[e.row + 1];
            last_row_ = e.row;
        }
        for (int i = 0; i < n_; ++i) row_ptr_[i + 1] += row_ptr_[i];
    }

    int size() const { return n_; }
    int nonzeros() const { return static_cast<int>(cols_.size()); }
    int row_begin(int i) const { return row_ptr_[i]; }
    int row_end(int i) const { return row_ptr_[i + 1]; }
    int col(int k) const { return cols_[k]; }
    double g(int k) const { return g_[k]; }
    double b(int k) const { return b_[k]; }

    bool has_entry(int i, int j) const { return find(i, j) >= 0; }
    double G(int i, int j) const {
        const int k = find(i, j);
        return k >= 0 ? g_[k] : 0.0;
    }
    double B(int i, int j) const {
        const int k = find(i, j);
        return k >= 0 ? b_[k] : 0.0;
    }

    std::complex<double> row_sum(int i) const {
        std::complex<double> s{};
        for (int k = row_begin(i); k < row_end(i); ++k) s += std::complex<double>(g_[k], b_[k]);
        return s;
    }

    Eigen::MatrixXcd to_dense() const {
        Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n_, n_);
        for (int i = 0; i < n_; ++i)
            for (int k = row_begin(i); k < row_end(i); ++k) y(i, cols_[k]) = {g_[k], b_[k]};
        return y;
    }

private:
    int find(int i, int j) const {
        auto first = cols_.begin() + row_ptr_[i];
        auto last = cols_.begin() + row_ptr_[i + 1];
        auto it = std::lower_bound(first, last, j);
        return (it != last && *it == j) ? static_cast<int>(it - cols_.begin()) : -1;
    }

    int n_ = 0;
    int last_row_ = -1;
    std::vector<int> row_ptr_;
    std::vector<int> cols_;
    std::vector<double> g_;
    std::vector<double> b_;
};

/// Assembles Ybus with the pi model (tap on the from side) or the series-only
/// model selected by `case.model`. Every bus gets a diagonal entry.
inline AdmittanceMatrix build_ybus(const NetworkCase& c) {
    std::vector<AdmittanceMatrix::Entry> entries;
    entries.reserve(c.buses.size() + 4 * c.branches.size());
    for (const auto& b : c.buses) entries.push_back({b.id, b.id, b.shunt_g, b.shunt_b});
    for (const auto& br : c.branches) {
        const double t = c.effective_tap(br);
        const double half_b = 0.5 * c.effective_charging(br);
        const double gs = br.g_series, bs = br.b_series;
        const int f = br.from_bus, to = br.to_bus;
        entries.push_back({f, f, gs / (t * t), (bs + half_b) / (t * t)});
        entries.push_back({to, to, gs, bs + half_b});
        entries.push_back({f, to, -gs / t, -bs / t});
        entries.push_back({to, f, -gs / t, -bs / t});
    }
    return AdmittanceMatrix(c.n_bus(), std::move(entries));
}

} // namespace ppfnn
