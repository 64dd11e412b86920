#pragma once

#include <cmath>
#include <span>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ppfnn/nn.hpp"
#include "ppfnn/powerflow.hpp"
#include "ppfnn/sampling.hpp"

namespace ppfnn {

/// Absolute error limits behind the four accuracy indexes.
struct Thresholds {
    double v = 1e-4;     ///< p.u.
    double theta = 0.01; ///< rad
    double flow_mw = 5.0;

    bool operator==(const Thresholds&) const = default;
};

/// Fractions of entries whose absolute error exceeds the thresholds, plus the
/// standard loss on normalized outputs.
struct MetricsReport {
    double v_loss = 0.0;
    double p_vm = 0.0;
    double p_va = 0.0;
    double p_pf = 0.0;
    double p_qf = 0.0;
    int n_epoch = 0;
    Thresholds thresholds;
    Eigen::Index samples = 0;

    bool all_at_most(double fraction) const {
        return p_vm <= fraction && p_va <= fraction && p_pf <= fraction && p_qf <= fraction;
    }

    nlohmann::ordered_json to_json() const {
        return {{"v_loss", v_loss},
                {"p_vm", p_vm},
                {"p_va", p_va},
                {"p_pf", p_pf},
                {"p_qf", p_qf},
                {"n_epoch", n_epoch},
                {"samples", samples},
                {"thresholds", {{"v", thresholds.v}, {"theta", thresholds.theta}, {"flow_mw", thresholds.flow_mw}}}};
    }

    static MetricsReport from_json(const nlohmann::json& j) {
        MetricsReport r;
        r.v_loss = j.at("v_loss").get<double>();
        r.p_vm = j.at("p_vm").get<double>();
        r.p_va = j.at("p_va").get<double>();
        r.p_pf = j.at("p_pf").get<double>();
        r.p_qf = j.at("p_qf").get<double>();
        r.n_epoch = j.at("n_epoch").get<int>();
        r.samples = j.at("samples").get<Eigen::Index>();
        const auto& t = j.at("thresholds");
        r.thresholds = {t.at("v").get<double>(), t.at("theta").get<double>(), t.at("flow_mw").get<double>()};
        return r;
    }
};

/// Scores normalized predictions for the given dataset columns. Branch flows
/// are recomputed from the predicted voltages.
inline MetricsReport evaluate_predictions(const Dataset& d, std::span<const Eigen::Index> split,
                                          const Eigen::MatrixXd& y_pred, const Thresholds& th = {}) {
    if (y_pred.cols() != static_cast<Eigen::Index>(split.size()) || y_pred.rows() != d.y.rows())
        throw ShapeError("prediction shape does not match the split");
    MetricsReport r;
    r.thresholds = th;
    r.samples = y_pred.cols();
    if (r.samples == 0) return r;
    const int nb = d.n_bus();
    const Eigen::MatrixXd y_true_n = detail::columns(d.y, split);
    r.v_loss = 0.5 * (y_pred - y_true_n).squaredNorm() / static_cast<double>(r.samples);

    const Eigen::MatrixXd yp = d.y_norm.invert(y_pred), yt = d.y_norm.invert(y_true_n);
    const Eigen::MatrixXd pt = d.p_norm.invert(detail::columns(d.p_br, split));
    const Eigen::MatrixXd qt = d.q_norm.invert(detail::columns(d.q_br, split));
    Eigen::MatrixXd pp, qp;
    sending_end_flows(yp.topRows(nb), yp.bottomRows(nb), d.grid.branches, pp, qp);

    const double n_bus_entries = static_cast<double>(nb) * static_cast<double>(r.samples);
    const double n_branch_entries = static_cast<double>(pp.size());
    const double flow_tol = th.flow_mw / d.grid.base_mva;
    r.p_vm = static_cast<double>(((yp.topRows(nb) - yt.topRows(nb)).array().abs() > th.v).count()) / n_bus_entries;
    r.p_va = static_cast<double>(((yp.bottomRows(nb) - yt.bottomRows(nb)).array().abs() > th.theta).count()) /
             n_bus_entries;
    if (n_branch_entries > 0) {
        r.p_pf = static_cast<double>(((pp - pt).array().abs() > flow_tol).count()) / n_branch_entries;
        r.p_qf = static_cast<double>(((qp - qt).array().abs() > flow_tol).count()) / n_branch_entries;
    }
    return r;
}

inline MetricsReport evaluate_indexes(const DnnModel& model, const Dataset& d, std::span<const Eigen::Index> split,
                                      const Thresholds& th = {}) {
    const Eigen::MatrixXd x = detail::columns(d.x, split);
    return evaluate_predictions(d, split, predict(model, x), th);
}

} // namespace ppfnn
