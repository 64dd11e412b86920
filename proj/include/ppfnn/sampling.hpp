#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ppfnn/error.hpp"
#include "ppfnn/grid.hpp"
#include "ppfnn/io.hpp"
#include "ppfnn/log.hpp"
#include "ppfnn/parallel.hpp"
#include "ppfnn/powerflow.hpp"
#include "ppfnn/random.hpp"

namespace ppfnn {

// ---------------------------------------------------------------------------
// Distributions

struct Normal {
    double mean = 0.0;
    double std = 0.0;
};
struct Uniform {
    double lo = 0.0;
    double hi = 0.0;
};
/// scale * Beta(a, b)
struct Beta {
    double a = 1.0;
    double b = 1.0;
    double scale = 1.0;
};
struct Weibull {
    double shape = 1.0;
    double scale = 1.0;
};

using Distribution = std::variant<Normal, Uniform, Beta, Weibull>;

inline void validate(const Distribution& d) {
    auto finite = [](double v) { return std::isfinite(v); };
    std::visit(
        [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Normal>) {
                if (!finite(x.mean) || !finite(x.std) || x.std < 0.0)
                    throw InvalidArgument("normal distribution needs a finite mean and std >= 0");
            } else if constexpr (std::is_same_v<T, Uniform>) {
                if (!finite(x.lo) || !finite(x.hi) || x.lo > x.hi)
                    throw InvalidArgument("uniform distribution needs finite lo <= hi");
            } else if constexpr (std::is_same_v<T, Beta>) {
                if (!(x.a > 0.0) || !(x.b > 0.0) || !finite(x.a) || !finite(x.b) || !finite(x.scale))
                    throw InvalidArgument("beta distribution needs a, b > 0 and a finite scale");
            } else {
                if (!(x.shape > 0.0) || !(x.scale > 0.0) || !finite(x.shape) || !finite(x.scale))
                    throw InvalidArgument("weibull distribution needs shape, scale > 0");
            }
        },
        d);
}

inline double draw(const Distribution& d, Philox4x32& rng) {
    return std::visit(
        [&](const auto& x) -> double {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Normal>) {
                if (x.std == 0.0) return x.mean;
                return std::normal_distribution<double>(x.mean, x.std)(rng);
            } else if constexpr (std::is_same_v<T, Uniform>) {
                return x.lo + (x.hi - x.lo) * uniform01(rng);
            } else if constexpr (std::is_same_v<T, Beta>) {
                const double u = std::gamma_distribution<double>(x.a, 1.0)(rng);
                const double v = std::gamma_distribution<double>(x.b, 1.0)(rng);
                return x.scale * (u / (u + v));
            } else {
                return std::weibull_distribution<double>(x.shape, x.scale)(rng);
            }
        },
        d);
}

inline Distribution distribution_from_json(const nlohmann::json& j, const std::string& where) {
    const auto kind = detail::field<std::string>(j, "dist", where);
    Distribution d;
    if (kind == "normal")
        d = Normal{detail::field<double>(j, "mean", where), detail::field<double>(j, "std", where)};
    else if (kind == "uniform")
        d = Uniform{detail::field<double>(j, "lo", where), detail::field<double>(j, "hi", where)};
    else if (kind == "beta")
        d = Beta{detail::field<double>(j, "a", where), detail::field<double>(j, "b", where),
                 detail::field_or<double>(j, "scale", 1.0, where)};
    else if (kind == "weibull")
        d = Weibull{detail::field<double>(j, "shape", where), detail::field<double>(j, "scale", where)};
    else
        throw InvalidArgument(where + ": unknown distribution '" + kind + "'");
    try {
        validate(d);
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(where + ": " + e.what());
    }
    return d;
}

inline nlohmann::ordered_json distribution_to_json(const Distribution& d) {
    return std::visit(
        [](const auto& x) -> nlohmann::ordered_json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Normal>)
                return {{"dist", "normal"}, {"mean", x.mean}, {"std", x.std}};
            else if constexpr (std::is_same_v<T, Uniform>)
                return {{"dist", "uniform"}, {"lo", x.lo}, {"hi", x.hi}};
            else if constexpr (std::is_same_v<T, Beta>)
                return {{"dist", "beta"}, {"a", x.a}, {"b", x.b}, {"scale", x.scale}};
            else
                return {{"dist", "weibull"}, {"shape", x.shape}, {"scale", x.scale}};
        },
        d);
}

// ---------------------------------------------------------------------------
// Uncertainty specification

/// A load entry replaces the bus's nominal load; an injection entry adds to it
/// (renewables). Values are in p.u.
enum class UncertainTarget { Load, Injection };

struct UncertainEntry {
    int bus = 0; ///< internal index
    UncertainTarget target = UncertainTarget::Load;
    std::optional<Distribution> p;
    std::optional<Distribution> q;
};

/// Sampled injections are base + sum(injection draws) - sum(load draws), where
/// base is the nominal injection with the uncertain loads removed.
struct UncertaintySpec {
    Injections base;
    std::vector<UncertainEntry> entries;

    int n_bus() const { return static_cast<int>(base.p.size()); }
};

/// Builds a spec from JSON of the form
///   {"load_relative_std": 0.1,
///    "entries": [{"bus": 5, "target": "load"|"injection", "p": {...}, "q": {...}}]}
/// `load_relative_std` makes every nonzero load Normal(load, rel * |load|);
/// explicit load entries override it per bus and quantity.
inline UncertaintySpec make_spec(const NetworkCase& c, const nlohmann::json& doc) {
    if (!doc.is_object()) throw InvalidArgument("uncertainty spec must be a JSON object");
    std::unordered_map<long long, int> index;
    for (const auto& b : c.buses) index[b.number] = b.id;

    std::vector<UncertainEntry> loads(c.buses.size());
    for (const auto& b : c.buses) loads[b.id].bus = b.id;
    std::vector<UncertainEntry> injections;

    if (doc.contains("load_relative_std")) {
        const double rel = detail::field<double>(doc, "load_relative_std", "spec");
        if (!std::isfinite(rel) || rel < 0.0) throw InvalidArgument("spec: load_relative_std must be >= 0");
        for (const auto& b : c.buses) {
            if (b.p_load != 0.0) loads[b.id].p = Normal{b.p_load, rel * std::abs(b.p_load)};
            if (b.q_load != 0.0) loads[b.id].q = Normal{b.q_load, rel * std::abs(b.q_load)};
        }
    }
    if (doc.contains("entries")) {
        const auto& list = doc.at("entries");
        if (!list.is_array()) throw InvalidArgument("spec: entries must be an array");
        for (std::size_t k = 0; k < list.size(); ++k) {
            const std::string where = "entries[" + std::to_string(k) + "]";
            const auto& e = list[k];
            const auto number = detail::field<long long>(e, "bus", where);
            const auto it = index.find(number);
            if (it == index.end()) throw InvalidArgument(where + ": unknown bus " + std::to_string(number));
            const auto target = detail::field_or<std::string>(e, "target", "load", where);
            UncertainEntry entry{it->second, UncertainTarget::Load, std::nullopt, std::nullopt};
            if (e.contains("p")) entry.p = distribution_from_json(e.at("p"), where + ".p");
            if (e.contains("q")) entry.q = distribution_from_json(e.at("q"), where + ".q");
            if (target == "load") {
                auto& slot = loads[entry.bus];
                if (entry.p) slot.p = entry.p;
                if (entry.q) slot.q = entry.q;
            } else if (target == "injection") {
                entry.target = UncertainTarget::Injection;
                injections.push_back(std::move(entry));
            } else {
                throw InvalidArgument(where + ": target must be 'load' or 'injection'");
            }
        }
    }

    UncertaintySpec spec{nominal_injections(c), {}};
    for (auto& e : loads) {
        if (!e.p && !e.q) continue;
        if (e.p) spec.base.p[e.bus] += c.buses[e.bus].p_load;
        if (e.q) spec.base.q[e.bus] += c.buses[e.bus].q_load;
        spec.entries.push_back(std::move(e));
    }
    for (auto& e : injections) spec.entries.push_back(std::move(e));
    return spec;
}

inline UncertaintySpec relative_load_spec(const NetworkCase& c, double relative_std) {
    return make_spec(c, {{"load_relative_std", relative_std}});
}

inline UncertaintySpec load_spec(const std::filesystem::path& path, const NetworkCase& c) {
    return make_spec(c, detail::parse_json(detail::read_file(path)));
}

/// Draws n injection samples as a (2 n_bus) x n matrix: P rows then Q rows.
/// Sample s, entry e, quantity k uses the stream {s, 2e + k, 'SMPL'}, so the
/// result does not depend on the worker count.
inline Eigen::MatrixXd draw_samples(const UncertaintySpec& spec, Eigen::Index n, std::uint64_t seed,
                                    unsigned workers = 1) {
    if (n <= 0) throw InvalidArgument("draw_samples: n must be positive");
    if (n > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("draw_samples: n too large");
    for (const auto& e : spec.entries) {
        if (e.p) validate(*e.p);
        if (e.q) validate(*e.q);
    }
    const int nb = spec.n_bus();
    Eigen::MatrixXd x(2 * nb, n);
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t s = begin; s < end; ++s) {
            auto col = x.col(static_cast<Eigen::Index>(s));
            col.head(nb) = spec.base.p;
            col.tail(nb) = spec.base.q;
            for (std::size_t e = 0; e < spec.entries.size(); ++e) {
                const auto& entry = spec.entries[e];
                const double sign = entry.target == UncertainTarget::Load ? -1.0 : 1.0;
                const auto stream = static_cast<std::uint32_t>(2 * e);
                if (entry.p) {
                    Philox4x32 rng(seed, static_cast<std::uint32_t>(s), stream, Philox4x32::kSampling);
                    col[entry.bus] += sign * draw(*entry.p, rng);
                }
                if (entry.q) {
                    Philox4x32 rng(seed, static_cast<std::uint32_t>(s), stream + 1, Philox4x32::kSampling);
                    col[nb + entry.bus] += sign * draw(*entry.q, rng);
                }
            }
        }
    });
    return x;
}

// ---------------------------------------------------------------------------
// z-score normalization

/// Per-row z-score with population std. Rows that are exactly constant get
/// std 0 and pass through as (v - mean). Rows whose spread is at roundoff
/// level (std <= constant_tolerance * max(1, |mean|)) are treated the same
/// way: a radial branch feeding a fixed injection has a constant flow that
/// the solver reproduces only to ~1e-12, and dividing by that noise would
/// swamp every other term.
struct Normalizer {
    static constexpr double constant_tolerance = 1e-9;

    Eigen::VectorXd mean;
    Eigen::VectorXd std;

    Eigen::Index size() const { return mean.size(); }
    bool degenerate(Eigen::Index i) const { return std[i] == 0.0; }
    /// Divisor used by apply: std, or 1 for degenerate rows.
    Eigen::VectorXd scale() const { return std.unaryExpr([](double s) { return s == 0.0 ? 1.0 : s; }); }

    static Normalizer fit(const Eigen::MatrixXd& m) {
        if (m.size() == 0) throw InvalidArgument("fit_normalizer: matrix is empty");
        Normalizer nz{Eigen::VectorXd(m.rows()), Eigen::VectorXd(m.rows())};
        const auto n = static_cast<double>(m.cols());
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const auto row = m.row(r);
            if (row.minCoeff() == row.maxCoeff()) {
                nz.mean[r] = row[0];
                nz.std[r] = 0.0;
                continue;
            }
            double sum = 0.0;
            for (Eigen::Index c = 0; c < m.cols(); ++c) sum += row[c];
            const double mu = sum / n;
            double ss = 0.0;
            for (Eigen::Index c = 0; c < m.cols(); ++c) ss += (row[c] - mu) * (row[c] - mu);
            const double sd = std::sqrt(ss / n);
            nz.mean[r] = mu;
            nz.std[r] = sd <= constant_tolerance * std::max(1.0, std::abs(mu)) ? 0.0 : sd;
        }
        return nz;
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& m) const {
        check(m);
        const Eigen::VectorXd s = scale();
        return (m.colwise() - mean).array().colwise() / s.array();
    }

    Eigen::MatrixXd invert(const Eigen::MatrixXd& m) const {
        check(m);
        const Eigen::VectorXd s = scale();
        return (m.array().colwise() * s.array()).matrix().colwise() + mean;
    }

    nlohmann::json to_json() const {
        return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
                {"std", std::vector<double>(std.data(), std.data() + std.size())}};
    }

    static Normalizer from_json(const nlohmann::json& j) {
        const auto mu = j.at("mean").get<std::vector<double>>();
        const auto sd = j.at("std").get<std::vector<double>>();
        if (mu.size() != sd.size()) throw ShapeError("normalizer mean/std length mismatch");
        return {Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size())),
                Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()))};
    }

    bool operator==(const Normalizer& o) const { return mean == o.mean && std == o.std; }

private:
    void check(const Eigen::MatrixXd& m) const {
        if (m.rows() != mean.size())
            throw ShapeError("normalizer expects " + std::to_string(mean.size()) + " rows, got " +
                             std::to_string(m.rows()));
    }
};

inline Normalizer fit_normalizer(const Eigen::MatrixXd& m) { return Normalizer::fit(m); }

// ---------------------------------------------------------------------------
// Datasets

/// Relative sizes of the train/validation/test splits (counts or fractions).
struct SplitWeights {
    double train = 10000;
    double validation = 2000;
    double test = 10000;
};

struct BuildOptions {
    unsigned workers = 0; ///< 0 = hardware concurrency
    SolverOptions solver{};
    double max_discard_fraction = 0.01;
};

/// Column subset of a dataset, still normalized.
struct Batch {
    Eigen::MatrixXd x, y, p, q;
    Eigen::Index size() const { return x.cols(); }
};

struct Dataset {
    NetworkCase grid;
    nlohmann::json spec;  ///< uncertainty spec as given, for the record
    std::uint64_t seed = 0;
    Eigen::Index n_requested = 0;
    Eigen::Index n_discarded = 0;

    Eigen::MatrixXd x, y, p_br, q_br; ///< normalized, one sample per column
    Normalizer x_norm, y_norm, p_norm, q_norm;
    std::vector<Eigen::Index> train, validation, test;

    Eigen::Index n_samples() const { return x.cols(); }
    int n_bus() const { return grid.n_bus(); }

    Batch gather(std::span<const Eigen::Index> idx) const {
        Batch b{Eigen::MatrixXd(x.rows(), idx.size()), Eigen::MatrixXd(y.rows(), idx.size()),
                Eigen::MatrixXd(p_br.rows(), idx.size()), Eigen::MatrixXd(q_br.rows(), idx.size())};
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto c = static_cast<Eigen::Index>(k);
            b.x.col(c) = x.col(idx[k]);
            b.y.col(c) = y.col(idx[k]);
            b.p.col(c) = p_br.col(idx[k]);
            b.q.col(c) = q_br.col(idx[k]);
        }
        return b;
    }
};

namespace detail {

inline std::vector<Eigen::Index> iota_range(Eigen::Index begin, Eigen::Index end) {
    std::vector<Eigen::Index> v;
    for (Eigen::Index i = begin; i < end; ++i) v.push_back(i);
    return v;
}

inline Eigen::MatrixXd columns(const Eigen::MatrixXd& m, std::span<const Eigen::Index> idx) {
    Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(idx[k]);
    return out;
}

} // namespace detail

/// Raw power-flow results for a block of injection samples.
struct SolvedSamples {
    Eigen::MatrixXd v, theta;      ///< n_bus x n, valid where converged
    std::vector<char> converged;
    Eigen::Index n_failed = 0;
};

inline SolvedSamples solve_samples(const NetworkCase& c, const Eigen::MatrixXd& injections,
                                   const SolverOptions& solver = {}, unsigned workers = 1) {
    const int nb = c.n_bus();
    if (injections.rows() != 2 * nb) throw ShapeError("injection matrix must have 2 * n_bus rows");
    const AdmittanceMatrix ybus = build_ybus(c);
    const Eigen::Index n = injections.cols();
    SolvedSamples out{Eigen::MatrixXd::Zero(nb, n), Eigen::MatrixXd::Zero(nb, n),
                      std::vector<char>(static_cast<std::size_t>(n), 0), 0};
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t begin, std::size_t end) {
        Injections inj{Eigen::VectorXd(nb), Eigen::VectorXd(nb)};
        for (std::size_t s = begin; s < end; ++s) {
            const auto col = static_cast<Eigen::Index>(s);
            inj.p = injections.col(col).head(nb);
            inj.q = injections.col(col).tail(nb);
            const PowerFlowSolution sol = try_solve_power_flow(c, ybus, inj, solver);
            if (!sol.converged) continue;
            out.v.col(col) = sol.v;
            out.theta.col(col) = sol.theta;
            out.converged[s] = 1;
        }
    });
    for (char ok : out.converged) out.n_failed += ok ? 0 : 1;
    return out;
}

/// Draws n samples, solves each, and splits the converged ones contiguously
/// into train/validation/test. Normalizers are fit on the training split.
inline Dataset build_dataset(const NetworkCase& c, const UncertaintySpec& spec, Eigen::Index n, std::uint64_t seed,
                             const SplitWeights& split = {}, const BuildOptions& options = {},
                             nlohmann::json spec_record = {}) {
    if (!(split.train > 0.0) || split.validation < 0.0 || split.test < 0.0)
        throw InvalidArgument("split weights must be non-negative with a positive training share");
    if (spec.n_bus() != c.n_bus()) throw ShapeError("uncertainty spec and case disagree on bus count");
    const int nb = c.n_bus();

    const Eigen::MatrixXd raw_x = draw_samples(spec, n, seed, options.workers);
    const SolvedSamples solved = solve_samples(c, raw_x, options.solver, options.workers);
    if (static_cast<double>(solved.n_failed) > options.max_discard_fraction * static_cast<double>(n))
        throw Error(std::to_string(solved.n_failed) + " of " + std::to_string(n) +
                    " samples failed to converge; the uncertainty spec is likely infeasible");
    if (solved.n_failed > 0)
        log_warning("discarded " + std::to_string(solved.n_failed) + " non-converged samples");

    std::vector<Eigen::Index> kept;
    for (Eigen::Index s = 0; s < n; ++s)
        if (solved.converged[static_cast<std::size_t>(s)]) kept.push_back(s);
    const auto n_kept = static_cast<Eigen::Index>(kept.size());

    Eigen::MatrixXd x = detail::columns(raw_x, kept);
    Eigen::MatrixXd y(2 * nb, n_kept);
    y.topRows(nb) = detail::columns(solved.v, kept);
    y.bottomRows(nb) = detail::columns(solved.theta, kept);
    Eigen::MatrixXd p, q;
    sending_end_flows(y.topRows(nb), y.bottomRows(nb), c.branches, p, q);

    const double total = split.train + split.validation + split.test;
    const auto n_val = static_cast<Eigen::Index>(std::floor(static_cast<double>(n_kept) * split.validation / total));
    const auto n_test = static_cast<Eigen::Index>(std::floor(static_cast<double>(n_kept) * split.test / total));
    const Eigen::Index n_train = n_kept - n_val - n_test;

    Dataset d;
    d.grid = c;
    d.spec = std::move(spec_record);
    d.seed = seed;
    d.n_requested = n;
    d.n_discarded = solved.n_failed;
    d.train = detail::iota_range(0, n_train);
    d.validation = detail::iota_range(n_train, n_train + n_val);
    d.test = detail::iota_range(n_train + n_val, n_kept);

    d.x_norm = Normalizer::fit(x.leftCols(n_train));
    d.y_norm = Normalizer::fit(y.leftCols(n_train));
    d.p_norm = Normalizer::fit(p.leftCols(n_train));
    d.q_norm = Normalizer::fit(q.leftCols(n_train));
    d.x = d.x_norm.apply(x);
    d.y = d.y_norm.apply(y);
    d.p_br = d.p_norm.apply(p);
    d.q_br = d.q_norm.apply(q);
    return d;
}

// ---------------------------------------------------------------------------
// Dataset files

inline constexpr std::string_view kDatasetMagic = "PPFDAT01";

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    nlohmann::json h;
    h["format_version"] = 1;
    h["case"] = case_to_json(d.grid);
    h["branch_model"] = d.grid.model == BranchModel::Series ? "series" : "pi";
    h["spec"] = d.spec;
    h["seed"] = d.seed;
    h["n_requested"] = d.n_requested;
    h["n_discarded"] = d.n_discarded;
    h["normalizers"] = {{"x", d.x_norm.to_json()},
                        {"y", d.y_norm.to_json()},
                        {"p_br", d.p_norm.to_json()},
                        {"q_br", d.q_norm.to_json()}};
    h["splits"] = {{"train", d.train}, {"validation", d.validation}, {"test", d.test}};
    write_container(path, kDatasetMagic, std::move(h),
                    {{"x", &d.x}, {"y", &d.y}, {"p_br", &d.p_br}, {"q_br", &d.q_br}});
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    Container c = read_container(path, kDatasetMagic);
    const auto& h = c.header;
    if (h.at("format_version").get<int>() != 1) throw IoError("unsupported dataset version", path.string());
    Dataset d;
    ParseOptions opt;
    opt.model = h.at("branch_model").get<std::string>() == "pi" ? BranchModel::Pi : BranchModel::Series;
    {
        // The dropped-parameter warning was already shown when the dataset was built.
        auto previous = detail::log_sink();
        set_log_sink({});
        d.grid = parse_case(h.at("case").dump(), opt);
        set_log_sink(std::move(previous));
    }
    d.spec = h.at("spec");
    d.seed = h.at("seed").get<std::uint64_t>();
    d.n_requested = h.at("n_requested").get<Eigen::Index>();
    d.n_discarded = h.at("n_discarded").get<Eigen::Index>();
    const auto& nz = h.at("normalizers");
    d.x_norm = Normalizer::from_json(nz.at("x"));
    d.y_norm = Normalizer::from_json(nz.at("y"));
    d.p_norm = Normalizer::from_json(nz.at("p_br"));
    d.q_norm = Normalizer::from_json(nz.at("q_br"));
    d.train = h.at("splits").at("train").get<std::vector<Eigen::Index>>();
    d.validation = h.at("splits").at("validation").get<std::vector<Eigen::Index>>();
    d.test = h.at("splits").at("test").get<std::vector<Eigen::Index>>();
    d.x = std::move(c.blocks.at("x"));
    d.y = std::move(c.blocks.at("y"));
    d.p_br = std::move(c.blocks.at("p_br"));
    d.q_br = std::move(c.blocks.at("q_br"));

    const Eigen::Index n = d.x.cols();
    if (d.y.cols() != n || d.p_br.cols() != n || d.q_br.cols() != n || d.x.rows() != 2 * d.n_bus() ||
        d.y.rows() != 2 * d.n_bus() || d.p_br.rows() != d.grid.n_branch() || d.q_br.rows() != d.grid.n_branch())
        throw IoError("dataset shapes are inconsistent", path.string());
    for (const auto* split : {&d.train, &d.validation, &d.test})
        for (auto i : *split)
            if (i < 0 || i >= n) throw IoError("split index out of range", path.string());
    return d;
}

/// Writes raw (denormalized) x, y, p_br, q_br and the split assignment as CSV.
inline void export_dataset_csv(const Dataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> xcols, ycols, bcols;
    for (const char* pre : {"p_", "q_"})
        for (const auto& b : d.grid.buses) xcols.push_back(pre + std::to_string(b.number));
    for (const char* pre : {"v_", "theta_"})
        for (const auto& b : d.grid.buses) ycols.push_back(pre + std::to_string(b.number));
    for (const auto& br : d.grid.branches)
        bcols.push_back(std::to_string(d.grid.buses[br.from_bus].number) + "-" +
                        std::to_string(d.grid.buses[br.to_bus].number));
    detail::write_file(dir / "x.csv", matrix_to_csv(d.x_norm.invert(d.x), xcols));
    detail::write_file(dir / "y.csv", matrix_to_csv(d.y_norm.invert(d.y), ycols));
    detail::write_file(dir / "p_br.csv", matrix_to_csv(d.p_norm.invert(d.p_br), bcols));
    detail::write_file(dir / "q_br.csv", matrix_to_csv(d.q_norm.invert(d.q_br), bcols));
    std::string split = "sample,split\n";
    for (auto i : d.train) split += std::to_string(i) + ",train\n";
    for (auto i : d.validation) split += std::to_string(i) + ",validation\n";
    for (auto i : d.test) split += std::to_string(i) + ",test\n";
    detail::write_file(dir / "splits.csv", split);
}

} // namespace ppfnn
