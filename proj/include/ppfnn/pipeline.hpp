#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ppfnn/error.hpp"
#include "ppfnn/grid.hpp"
#include "ppfnn/metrics.hpp"
#include "ppfnn/nn.hpp"
#include "ppfnn/parallel.hpp"
#include "ppfnn/powerflow.hpp"
#include "ppfnn/sampling.hpp"
#include "ppfnn/training.hpp"

namespace ppfnn {

// ---------------------------------------------------------------------------
// Statistics

/// Equal-width bins; mass[i] is the fraction of samples in [edges[i], edges[i+1]).
/// The last bin is closed on the right.
struct Histogram {
    std::vector<double> edges;
    std::vector<double> mass;

    bool operator==(const Histogram&) const = default;
};

namespace detail {

/// Linear-interpolation quantile of sorted data.
inline double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

} // namespace detail

/// `bins` = 0 picks the Freedman-Diaconis width 2 IQR n^(-1/3), capped to
/// [1, max_bins] bins.
inline Histogram make_histogram(std::span<const double> values, int bins = 0, int max_bins = 200) {
    Histogram h;
    if (values.empty()) return h;
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted.front(), hi = sorted.back();
    const auto n = static_cast<double>(sorted.size());
    if (bins <= 0) {
        const double iqr = detail::quantile(sorted, 0.75) - detail::quantile(sorted, 0.25);
        const double width = 2.0 * iqr / std::cbrt(n);
        bins = width > 0.0 ? static_cast<int>(std::ceil((hi - lo) / width)) : 1;
        bins = std::clamp(bins, 1, max_bins);
    }
    if (hi == lo) bins = 1;
    const double width = (hi - lo) / bins;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + width * i;
    h.edges.back() = hi;
    std::vector<long long> count(static_cast<std::size_t>(bins), 0);
    for (double v : sorted) {
        int k = width > 0.0 ? static_cast<int>((v - lo) / width) : 0;
        count[static_cast<std::size_t>(std::clamp(k, 0, bins - 1))]++;
    }
    h.mass.resize(count.size());
    for (std::size_t i = 0; i < count.size(); ++i) h.mass[i] = static_cast<double>(count[i]) / n;
    return h;
}

/// Per-element statistics for one output quantity.
struct QuantityStats {
    std::string name;
    std::vector<std::string> labels;
    Eigen::VectorXd mean;
    Eigen::VectorXd std; ///< population
    std::vector<Histogram> hist;

    bool operator==(const QuantityStats& o) const {
        return name == o.name && labels == o.labels && mean == o.mean && std == o.std && hist == o.hist;
    }
};

struct PpfStatistics {
    Eigen::Index samples = 0;
    QuantityStats v{"v", {}, {}, {}, {}};
    QuantityStats theta{"theta", {}, {}, {}, {}};
    QuantityStats p{"p", {}, {}, {}, {}};
    QuantityStats q{"q", {}, {}, {}, {}};

    std::array<const QuantityStats*, 4> groups() const { return {&v, &theta, &p, &q}; }
    std::array<QuantityStats*, 4> groups() { return {&v, &theta, &p, &q}; }
    bool operator==(const PpfStatistics&) const = default;
};

inline std::vector<std::string> bus_labels(const NetworkCase& c) {
    std::vector<std::string> out;
    for (const auto& b : c.buses) out.push_back(std::to_string(b.number));
    return out;
}

inline std::vector<std::string> branch_labels(const NetworkCase& c) {
    std::vector<std::string> out;
    for (const auto& br : c.branches)
        out.push_back(std::to_string(c.buses[br.from_bus].number) + "-" + std::to_string(c.buses[br.to_bus].number));
    return out;
}

namespace detail {

inline QuantityStats row_stats(std::string name, std::vector<std::string> labels, const Eigen::MatrixXd& m, int bins) {
    QuantityStats s{std::move(name), std::move(labels), Eigen::VectorXd::Zero(m.rows()), Eigen::VectorXd::Zero(m.rows()),
                    {}};
    const auto n = static_cast<double>(m.cols());
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        if (m.row(r).minCoeff() == m.row(r).maxCoeff()) {
            // Exact constant: summing would perturb the mean in the last bit.
            s.mean[r] = m(r, 0);
            s.hist.push_back(make_histogram(std::vector<double>(row.size(), m(r, 0)), bins));
            continue;
        }
        double sum = 0.0;
        for (Eigen::Index c = 0; c < m.cols(); ++c) sum += row[static_cast<std::size_t>(c)] = m(r, c);
        const double mu = sum / n;
        double ss = 0.0;
        for (double x : row) ss += (x - mu) * (x - mu);
        s.mean[r] = mu;
        s.std[r] = std::sqrt(ss / n);
        s.hist.push_back(make_histogram(row, bins));
    }
    return s;
}

} // namespace detail

/// Statistics of voltages (n_bus x n) and sending-end flows computed from them.
inline PpfStatistics compute_statistics(const NetworkCase& c, const Eigen::MatrixXd& v, const Eigen::MatrixXd& theta,
                                        int bins = 0) {
    if (v.rows() != c.n_bus() || theta.rows() != c.n_bus() || v.cols() != theta.cols())
        throw ShapeError("state matrices do not match the case");
    if (v.cols() == 0) throw InvalidArgument("statistics need at least one sample");
    Eigen::MatrixXd p, q;
    sending_end_flows(v, theta, c.branches, p, q);
    PpfStatistics s;
    s.samples = v.cols();
    s.v = detail::row_stats("v", bus_labels(c), v, bins);
    s.theta = detail::row_stats("theta", bus_labels(c), theta, bins);
    s.p = detail::row_stats("p", branch_labels(c), p, bins);
    s.q = detail::row_stats("q", branch_labels(c), q, bins);
    return s;
}

/// Largest absolute differences of means and standard deviations per quantity.
struct StatsDelta {
    std::string name;
    double max_mean_delta = 0.0;
    double max_std_delta = 0.0;
};

inline std::vector<StatsDelta> compare_statistics(const PpfStatistics& a, const PpfStatistics& ref) {
    std::vector<StatsDelta> out;
    const auto ga = a.groups(), gr = ref.groups();
    for (std::size_t i = 0; i < ga.size(); ++i) {
        if (ga[i]->mean.size() != gr[i]->mean.size()) throw ShapeError("statistics cover different elements");
        StatsDelta d{ga[i]->name};
        if (ga[i]->mean.size() > 0) {
            d.max_mean_delta = (ga[i]->mean - gr[i]->mean).cwiseAbs().maxCoeff();
            d.max_std_delta = (ga[i]->std - gr[i]->std).cwiseAbs().maxCoeff();
        }
        out.push_back(d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// PPF runs

enum class Precision { Single, Double };

struct PpfOptions {
    unsigned workers = 1;          ///< solver path only
    SolverOptions solver{};
    double max_fail_fraction = 0.01;
    Precision precision = Precision::Single; ///< model path only
    int bins = 0;                  ///< 0 = Freedman-Diaconis
};

struct PpfTiming {
    double eval_seconds = 0.0; ///< evaluation only: no sampling, flows or statistics
    double per_sample_seconds = 0.0;
    unsigned workers = 1;
};

struct PpfResult {
    std::string engine;
    PpfStatistics stats;
    PpfTiming timing;
    Eigen::Index n_requested = 0;
    Eigen::Index n_failed = 0;
    Eigen::MatrixXd v, theta; ///< evaluated states, one column per kept sample
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace detail

/// Evaluates pre-drawn injections with per-sample Newton-Raphson.
inline PpfResult run_ppf_solver(const NetworkCase& c, const Eigen::MatrixXd& injections, const PpfOptions& opt = {}) {
    PpfResult r;
    r.engine = "nr";
    r.n_requested = injections.cols();
    const auto t0 = std::chrono::steady_clock::now();
    const SolvedSamples solved = solve_samples(c, injections, opt.solver, opt.workers);
    r.timing.eval_seconds = detail::seconds_since(t0);
    r.timing.workers = opt.workers == 0 ? default_workers() : opt.workers;
    r.n_failed = solved.n_failed;
    if (static_cast<double>(r.n_failed) > opt.max_fail_fraction * static_cast<double>(r.n_requested))
        throw Error(std::to_string(r.n_failed) + " of " + std::to_string(r.n_requested) +
                    " samples failed to converge");
    std::vector<Eigen::Index> kept;
    for (Eigen::Index s = 0; s < injections.cols(); ++s)
        if (solved.converged[static_cast<std::size_t>(s)]) kept.push_back(s);
    r.v = detail::columns(solved.v, kept);
    r.theta = detail::columns(solved.theta, kept);
    r.timing.per_sample_seconds = r.timing.eval_seconds / static_cast<double>(r.n_requested);
    r.stats = compute_statistics(c, r.v, r.theta, opt.bins);
    return r;
}

/// Evaluates pre-drawn injections with one batched pass through the model.
inline PpfResult run_ppf_model(const DnnModel& model, const NetworkCase& c, const Eigen::MatrixXd& injections,
                               const PpfOptions& opt = {}) {
    if (model.input_size() != 2 * c.n_bus() || model.output_size() != 2 * c.n_bus())
        throw ShapeError("model width does not match the case");
    PpfResult r;
    r.engine = opt.precision == Precision::Single ? "dnn-f32" : "dnn-f64";
    r.n_requested = injections.cols();
    const auto t0 = std::chrono::steady_clock::now();
    Eigen::MatrixXd y;
    if (opt.precision == Precision::Single)
        y = Predictor<float>(model).predict(injections);
    else
        y = Predictor<double>(model).predict(injections);
    r.timing.eval_seconds = detail::seconds_since(t0);
    r.timing.per_sample_seconds = r.timing.eval_seconds / static_cast<double>(r.n_requested);
    r.v = y.topRows(c.n_bus());
    r.theta = y.bottomRows(c.n_bus());
    r.stats = compute_statistics(c, r.v, r.theta, opt.bins);
    return r;
}

/// Draws n samples from `spec` with `seed`, then evaluates them with the
/// model, or with the solver when `model` is null.
inline PpfResult run_ppf(const DnnModel* model, const NetworkCase& c, const UncertaintySpec& spec, Eigen::Index n,
                         std::uint64_t seed, const PpfOptions& opt = {}) {
    if (n < 1) throw InvalidArgument("run_ppf: n_samples must be at least 1");
    const Eigen::MatrixXd x = draw_samples(spec, n, seed, opt.workers);
    return model ? run_ppf_model(*model, c, x, opt) : run_ppf_solver(c, x, opt);
}

/// Timing of both engines on the same samples.
struct BenchResult {
    Eigen::Index n = 0;
    double solver_seconds = 0.0;
    double solver_parallel_seconds = 0.0;
    unsigned parallel_workers = 1;
    double model_f64_seconds = 0.0;
    double model_f32_seconds = 0.0;
    int repeats = 1;

    double speedup_f32() const { return solver_seconds / model_f32_seconds; }
    double speedup_f64() const { return solver_seconds / model_f64_seconds; }

    nlohmann::ordered_json to_json() const {
        return {{"samples", n},
                {"solver_seconds", solver_seconds},
                {"solver_parallel_seconds", solver_parallel_seconds},
                {"parallel_workers", parallel_workers},
                {"model_f64_seconds", model_f64_seconds},
                {"model_f32_seconds", model_f32_seconds},
                {"speedup_f32", speedup_f32()},
                {"speedup_f64", speedup_f64()},
                {"model_timing", "median of " + std::to_string(repeats) + " runs"}};
    }
};

/// Single-threaded NR loop versus batched inference on identical samples.
/// Model timings are the median of `repeats` runs; the solver runs once.
inline BenchResult bench_ppf(const DnnModel& model, const NetworkCase& c, const Eigen::MatrixXd& injections,
                             int repeats = 5, unsigned parallel_workers = 0) {
    BenchResult b;
    b.n = injections.cols();
    b.repeats = std::max(1, repeats);
    PpfOptions opt;
    b.solver_seconds = run_ppf_solver(c, injections, opt).timing.eval_seconds;
    b.parallel_workers = parallel_workers == 0 ? default_workers() : parallel_workers;
    opt.workers = b.parallel_workers;
    b.solver_parallel_seconds = run_ppf_solver(c, injections, opt).timing.eval_seconds;
    auto median = [&](Precision p) {
        std::vector<double> t;
        PpfOptions o;
        o.precision = p;
        for (int i = 0; i < b.repeats; ++i) t.push_back(run_ppf_model(model, c, injections, o).timing.eval_seconds);
        std::sort(t.begin(), t.end());
        return t[t.size() / 2];
    };
    b.model_f64_seconds = median(Precision::Double);
    b.model_f32_seconds = median(Precision::Single);
    return b;
}

// ---------------------------------------------------------------------------
// Method comparison

enum class Protocol { FixedEpochs, StopOnAccuracy };

inline Protocol parse_protocol(std::string_view s) {
    if (s == "fixed-epochs") return Protocol::FixedEpochs;
    if (s == "stop-on-accuracy") return Protocol::StopOnAccuracy;
    throw InvalidArgument("unknown protocol '" + std::string(s) + "'");
}

struct ComparisonRow {
    Mode mode = Mode::M1;
    MetricsReport test;
    std::string stop_reason;
    double median_epoch_seconds = 0.0;
    double mean_epoch_seconds = 0.0;
    std::string error; ///< non-empty if training failed
};

struct ComparisonTable {
    Protocol protocol = Protocol::FixedEpochs;
    std::vector<ComparisonRow> rows;

    std::string to_csv() const {
        std::string out = "mode,n_epoch,stop_reason,v_loss,p_vm,p_va,p_pf,p_qf,median_epoch_seconds,"
                          "mean_epoch_seconds,error\n";
        auto num = [](double v) { return nlohmann::json(v).dump(); };
        for (const auto& r : rows)
            out += to_string(r.mode) + "," + std::to_string(r.test.n_epoch) + "," + r.stop_reason + "," +
                   num(r.test.v_loss) + "," + num(r.test.p_vm) + "," + num(r.test.p_va) + "," + num(r.test.p_pf) +
                   "," + num(r.test.p_qf) + "," + num(r.median_epoch_seconds) + "," + num(r.mean_epoch_seconds) +
                   "," + r.error + "\n";
        return out;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["protocol"] = protocol == Protocol::FixedEpochs ? "fixed-epochs" : "stop-on-accuracy";
        j["rows"] = nlohmann::ordered_json::array();
        for (const auto& r : rows)
            j["rows"].push_back({{"mode", to_string(r.mode)},
                                 {"stop_reason", r.stop_reason},
                                 {"test", r.test.to_json()},
                                 {"median_epoch_seconds", r.median_epoch_seconds},
                                 {"mean_epoch_seconds", r.mean_epoch_seconds},
                                 {"error", r.error}});
        return j;
    }
};

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Trains each mode from the same seed and data and scores it on the test
/// split. Fixed-epochs runs exactly max_epochs; stop-on-accuracy runs until
/// the validation indexes meet the target (patience disabled) or max_epochs.
/// A failing mode is recorded and the others still run.
inline ComparisonTable compare_methods(const std::vector<Mode>& modes, const TrainConfig& base, const Dataset& d,
                                       Protocol protocol, std::vector<TrainResult>* models = nullptr) {
    ComparisonTable t;
    t.protocol = protocol;
    for (Mode mode : modes) {
        TrainConfig cfg = base;
        cfg.mode = mode;
        cfg.patience = 0;
        cfg.stop_on_accuracy = protocol == Protocol::StopOnAccuracy;
        ComparisonRow row;
        row.mode = mode;
        try {
            TrainResult r = train(cfg, d);
            row.stop_reason = r.history.stop_reason;
            std::vector<double> secs;
            for (const auto& e : r.history.epochs) secs.push_back(e.seconds);
            row.median_epoch_seconds = median_of(secs);
            row.mean_epoch_seconds =
                secs.empty() ? 0.0 : std::accumulate(secs.begin(), secs.end(), 0.0) / static_cast<double>(secs.size());
            row.test = evaluate_indexes(r.model, d, d.test, cfg.thresholds);
            row.test.n_epoch = static_cast<int>(r.history.epochs.size());
            if (models) models->push_back(std::move(r));
        } catch (const Error& e) {
            row.stop_reason = "error";
            row.error = e.what();
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Reports

struct PpfReport {
    nlohmann::ordered_json meta; ///< engine, case, seed, timing, ...
    PpfStatistics stats;
    std::optional<MetricsReport> metrics;
};

namespace detail {

inline nlohmann::ordered_json stats_to_json(const QuantityStats& s) {
    nlohmann::ordered_json j;
    j["labels"] = s.labels;
    j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
    j["std"] = std::vector<double>(s.std.data(), s.std.data() + s.std.size());
    j["histograms"] = nlohmann::ordered_json::array();
    for (const auto& h : s.hist) j["histograms"].push_back({{"edges", h.edges}, {"mass", h.mass}});
    return j;
}

inline Eigen::VectorXd vec(const nlohmann::ordered_json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline QuantityStats stats_from_json(const std::string& name, const nlohmann::ordered_json& j) {
    QuantityStats s{name, j.at("labels").get<std::vector<std::string>>(), vec(j.at("mean")), vec(j.at("std")), {}};
    for (const auto& h : j.at("histograms"))
        s.hist.push_back({h.at("edges").get<std::vector<double>>(), h.at("mass").get<std::vector<double>>()});
    if (s.mean.size() != static_cast<Eigen::Index>(s.labels.size()) || s.std.size() != s.mean.size() ||
        s.hist.size() != s.labels.size())
        throw ShapeError("report group '" + name + "' has inconsistent lengths");
    return s;
}

inline std::string num(double v) { return nlohmann::json(v).dump(); }

} // namespace detail

inline nlohmann::ordered_json report_to_json(const PpfReport& r) {
    nlohmann::ordered_json j;
    j["meta"] = r.meta.is_null() ? nlohmann::ordered_json::object() : r.meta;
    j["samples"] = r.stats.samples;
    for (const auto* g : r.stats.groups()) j["statistics"][g->name] = detail::stats_to_json(*g);
    j["metrics"] = r.metrics ? r.metrics->to_json() : nlohmann::ordered_json();
    return j;
}

inline PpfReport report_from_json(const nlohmann::ordered_json& j) {
    PpfReport r;
    r.meta = j.at("meta");
    r.stats.samples = j.at("samples").get<Eigen::Index>();
    for (auto* g : r.stats.groups()) *g = detail::stats_from_json(g->name, j.at("statistics").at(g->name));
    if (!j.at("metrics").is_null()) r.metrics = MetricsReport::from_json(j.at("metrics"));
    return r;
}

inline PpfReport read_report(const std::filesystem::path& dir) {
    try {
        return report_from_json(nlohmann::ordered_json::parse(detail::read_file(dir / "report.json")));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed report: ") + e.what(), (dir / "report.json").string());
    }
}

/// Writes report.json, stats_bus.csv, stats_branch.csv and one long-format
/// histogram CSV per quantity (element,label,bin,lo,hi,mass).
inline void export_report(const PpfReport& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory: " + ec.message(), dir.string());
    detail::write_file(dir / "report.json", report_to_json(r).dump(2) + "\n");

    auto table = [](const QuantityStats& a, const QuantityStats& b) {
        std::string out = "label," + a.name + "_mean," + a.name + "_std," + b.name + "_mean," + b.name + "_std\n";
        for (std::size_t i = 0; i < a.labels.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            out += a.labels[i] + "," + detail::num(a.mean[k]) + "," + detail::num(a.std[k]) + "," +
                   detail::num(b.mean[k]) + "," + detail::num(b.std[k]) + "\n";
        }
        return out;
    };
    detail::write_file(dir / "stats_bus.csv", table(r.stats.v, r.stats.theta));
    detail::write_file(dir / "stats_branch.csv", table(r.stats.p, r.stats.q));
    for (const auto* g : r.stats.groups()) {
        std::string out = "element,label,bin,lo,hi,mass\n";
        for (std::size_t e = 0; e < g->hist.size(); ++e) {
            const Histogram& h = g->hist[e];
            for (std::size_t b = 0; b < h.mass.size(); ++b)
                out += std::to_string(e) + "," + g->labels[e] + "," + std::to_string(b) + "," +
                       detail::num(h.edges[b]) + "," + detail::num(h.edges[b + 1]) + "," + detail::num(h.mass[b]) +
                       "\n";
        }
        detail::write_file(dir / ("hist_" + g->name + ".csv"), out);
    }
}

} // namespace ppfnn
