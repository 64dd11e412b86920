#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <nlohmann/json.hpp>

#include "ppfnn/error.hpp"
#include "ppfnn/grid.hpp"

namespace ppfnn {

enum class SolveStatus { Converged, MaxIterations, SingularJacobian, NonFinite };

struct PowerFlowSolution {
    Eigen::VectorXd v;     ///< p.u.
    Eigen::VectorXd theta; ///< rad, slack = 0
    bool converged = false;
    int iterations = 0;
    double max_mismatch = 0.0; ///< p.u., worst non-slack P or PQ-bus Q residual
    SolveStatus status = SolveStatus::MaxIterations;
};

enum class LinearSolver { Auto, Dense, Sparse };

struct SolverOptions {
    double tolerance = 1e-8;
    int max_iterations = 20;
    LinearSolver linear_solver = LinearSolver::Auto;
    int dense_bus_limit = 200; ///< Auto uses dense LU up to this many buses
    /// Initial (V, theta). Slack and PV magnitudes are still forced to their setpoints.
    const PowerFlowSolution* warm_start = nullptr;
};

/// Bus power injections P, Q computed from the nodal equations.
inline void bus_powers(const AdmittanceMatrix& y, const Eigen::VectorXd& v, const Eigen::VectorXd& theta,
                       Eigen::VectorXd& p, Eigen::VectorXd& q) {
    const int n = y.size();
    p.setZero(n);
    q.setZero(n);
    for (int i = 0; i < n; ++i) {
        double pi = 0.0, qi = 0.0;
        for (int k = y.row_begin(i); k < y.row_end(i); ++k) {
            const int j = y.col(k);
            const double t = theta[i] - theta[j];
            const double c = std::cos(t), s = std::sin(t);
            pi += v[j] * (y.g(k) * c + y.b(k) * s);
            qi += v[j] * (y.g(k) * s - y.b(k) * c);
        }
        p[i] = v[i] * pi;
        q[i] = v[i] * qi;
    }
}

namespace detail {

struct NrLayout {
    std::vector<int> pvpq; ///< non-slack buses, angle unknowns
    std::vector<int> pq;   ///< PQ buses, magnitude unknowns
    std::vector<int> angle_pos; ///< bus -> position in pvpq or -1
    std::vector<int> mag_pos;   ///< bus -> position in pq or -1

    explicit NrLayout(const NetworkCase& c) : angle_pos(c.n_bus(), -1), mag_pos(c.n_bus(), -1) {
        for (const auto& b : c.buses) {
            if (b.kind != BusKind::Slack) {
                angle_pos[b.id] = static_cast<int>(pvpq.size());
                pvpq.push_back(b.id);
            }
        }
        for (const auto& b : c.buses) {
            if (b.kind == BusKind::PQ) {
                mag_pos[b.id] = static_cast<int>(pvpq.size() + pq.size());
                pq.push_back(b.id);
            }
        }
    }

    int size() const { return static_cast<int>(pvpq.size() + pq.size()); }
};

/// Calls `emit(row, col, value)` for every structural Jacobian entry.
/// Rows are [dP(pvpq); dQ(pq)], columns [dtheta(pvpq); dV(pq)].
template <typename Emit>
void jacobian_entries(const NrLayout& layout, const AdmittanceMatrix& y, const Eigen::VectorXd& v,
                      const Eigen::VectorXd& theta, const Eigen::VectorXd& p, const Eigen::VectorXd& q, Emit&& emit) {
    const int n = y.size();
    for (int i = 0; i < n; ++i) {
        const int rp = layout.angle_pos[i];
        const int rq = layout.mag_pos[i];
        if (rp < 0) continue;
        for (int k = y.row_begin(i); k < y.row_end(i); ++k) {
            const int j = y.col(k);
            const int ct = layout.angle_pos[j];
            const int cv = layout.mag_pos[j];
            const double g = y.g(k), b = y.b(k);
            if (j == i) {
                const double vi = v[i];
                emit(rp, rp, -q[i] - b * vi * vi);
                if (cv >= 0) emit(rp, cv, p[i] / vi + g * vi);
                if (rq >= 0) {
                    emit(rq, rp, p[i] - g * vi * vi);
                    emit(rq, rq, q[i] / vi - b * vi);
                }
                continue;
            }
            const double t = theta[i] - theta[j];
            const double c = std::cos(t), s = std::sin(t);
            const double gs_bc = g * s - b * c;
            const double gc_bs = g * c + b * s;
            const double vivj = v[i] * v[j];
            if (ct >= 0) emit(rp, ct, vivj * gs_bc);
            if (cv >= 0) emit(rp, cv, v[i] * gc_bs);
            if (rq >= 0) {
                if (ct >= 0) emit(rq, ct, -vivj * gc_bs);
                if (cv >= 0) emit(rq, cv, v[i] * gs_bc);
            }
        }
    }
}

inline double mismatch(const NrLayout& layout, const Injections& spec, const Eigen::VectorXd& p,
                       const Eigen::VectorXd& q, Eigen::VectorXd& f) {
    f.resize(layout.size());
    const int npvpq = static_cast<int>(layout.pvpq.size());
    for (int k = 0; k < npvpq; ++k) f[k] = spec.p[layout.pvpq[k]] - p[layout.pvpq[k]];
    for (std::size_t k = 0; k < layout.pq.size(); ++k) f[npvpq + k] = spec.q[layout.pq[k]] - q[layout.pq[k]];
    return f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
}

} // namespace detail

/// Newton-Raphson dense Jacobian at (v, theta); exposed for verification.
inline Eigen::MatrixXd nr_jacobian(const NetworkCase& c, const AdmittanceMatrix& y, const Eigen::VectorXd& v,
                                   const Eigen::VectorXd& theta) {
    detail::NrLayout layout(c);
    Eigen::VectorXd p, q;
    bus_powers(y, v, theta, p, q);
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(layout.size(), layout.size());
    detail::jacobian_entries(layout, y, v, theta, p, q, [&](int r, int col, double val) { jac(r, col) += val; });
    return jac;
}

/// Full Newton-Raphson in polar form. Never throws on numerical failure;
/// inspect `status`.
inline PowerFlowSolution try_solve_power_flow(const NetworkCase& c, const AdmittanceMatrix& y, const Injections& spec,
                                              const SolverOptions& opt = {}) {
    const int n = c.n_bus();
    if (spec.p.size() != n || spec.q.size() != n) throw ShapeError("injection vectors must have one entry per bus");

    PowerFlowSolution sol;
    sol.v = Eigen::VectorXd::Ones(n);
    sol.theta = Eigen::VectorXd::Zero(n);
    if (opt.warm_start) {
        sol.v = opt.warm_start->v;
        sol.theta = opt.warm_start->theta;
    }
    for (const auto& b : c.buses) {
        if (b.kind != BusKind::PQ) sol.v[b.id] = b.v_setpoint;
        if (b.kind == BusKind::Slack) sol.theta[b.id] = 0.0;
    }

    const detail::NrLayout layout(c);
    const int m = layout.size();
    const int npvpq = static_cast<int>(layout.pvpq.size());
    const bool dense = opt.linear_solver == LinearSolver::Dense ||
                       (opt.linear_solver == LinearSolver::Auto && n <= opt.dense_bus_limit);

    Eigen::VectorXd p, q, f, dx;
    Eigen::MatrixXd jd;
    Eigen::SparseMatrix<double> js;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> sparse_lu;
    std::vector<Eigen::Triplet<double>> trip;
    bool pattern_ready = false;

    bus_powers(y, sol.v, sol.theta, p, q);
    sol.max_mismatch = detail::mismatch(layout, spec, p, q, f);

    while (true) {
        if (!std::isfinite(sol.max_mismatch)) {
            sol.status = SolveStatus::NonFinite;
            return sol;
        }
        if (sol.max_mismatch <= opt.tolerance) {
            sol.converged = true;
            sol.status = SolveStatus::Converged;
            return sol;
        }
        if (sol.iterations >= opt.max_iterations) {
            sol.status = SolveStatus::MaxIterations;
            return sol;
        }

        if (dense) {
            jd.setZero(m, m);
            detail::jacobian_entries(layout, y, sol.v, sol.theta, p, q,
                                     [&](int r, int col, double val) { jd(r, col) += val; });
            Eigen::PartialPivLU<Eigen::MatrixXd> lu(jd);
            if (!(lu.rcond() > 1e-14)) {
                sol.status = SolveStatus::SingularJacobian;
                return sol;
            }
            dx = lu.solve(f);
        } else {
            trip.clear();
            detail::jacobian_entries(layout, y, sol.v, sol.theta, p, q,
                                     [&](int r, int col, double val) { trip.emplace_back(r, col, val); });
            js.resize(m, m);
            js.setFromTriplets(trip.begin(), trip.end());
            if (!pattern_ready) {
                sparse_lu.analyzePattern(js);
                pattern_ready = true;
            }
            sparse_lu.factorize(js);
            if (sparse_lu.info() != Eigen::Success) {
                sol.status = SolveStatus::SingularJacobian;
                return sol;
            }
            dx = sparse_lu.solve(f);
        }
        if (!dx.allFinite()) {
            sol.status = SolveStatus::SingularJacobian;
            return sol;
        }

        for (int k = 0; k < npvpq; ++k) sol.theta[layout.pvpq[k]] += dx[k];
        for (std::size_t k = 0; k < layout.pq.size(); ++k) sol.v[layout.pq[k]] += dx[npvpq + k];
        ++sol.iterations;

        bus_powers(y, sol.v, sol.theta, p, q);
        sol.max_mismatch = detail::mismatch(layout, spec, p, q, f);
    }
}

/// Throwing variant: NonConvergence or SingularJacobian on failure.
inline PowerFlowSolution solve_power_flow(const NetworkCase& c, const AdmittanceMatrix& y, const Injections& spec,
                                          const SolverOptions& opt = {}) {
    PowerFlowSolution sol = try_solve_power_flow(c, y, spec, opt);
    switch (sol.status) {
    case SolveStatus::Converged: return sol;
    case SolveStatus::SingularJacobian: throw SingularJacobian(sol.iterations);
    default: throw NonConvergence(sol.iterations, sol.max_mismatch);
    }
}

inline PowerFlowSolution solve_power_flow(const NetworkCase& c, const Injections& spec, const SolverOptions& opt = {}) {
    return solve_power_flow(c, build_ybus(c), spec, opt);
}

// ---------------------------------------------------------------------------
// Branch flows and sensitivities (series branch model)

/// Active and reactive flow entering a branch at end i, given the series pair (g, b).
struct FlowPair {
    double p;
    double q;
};

inline FlowPair branch_flow(double g, double b, double vi, double vj, double theta_ij) {
    const double c = std::cos(theta_ij), s = std::sin(theta_ij);
    const double vivj = vi * vj;
    const double d = vi * vi - vivj * c;
    return {g * d - b * vivj * s, -b * d - g * vivj * s};
}

struct BranchFlows {
    Eigen::VectorXd p_from, q_from;
    Eigen::VectorXd p_to, q_to;
};

inline BranchFlows branch_flows(const Eigen::VectorXd& v, const Eigen::VectorXd& theta,
                                std::span<const Branch> branches) {
    const auto nb = static_cast<Eigen::Index>(branches.size());
    BranchFlows out{Eigen::VectorXd(nb), Eigen::VectorXd(nb), Eigen::VectorXd(nb), Eigen::VectorXd(nb)};
    for (Eigen::Index k = 0; k < nb; ++k) {
        const Branch& br = branches[k];
        const int i = br.from_bus, j = br.to_bus;
        const FlowPair f = branch_flow(br.g_series, br.b_series, v[i], v[j], theta[i] - theta[j]);
        const FlowPair t = branch_flow(br.g_series, br.b_series, v[j], v[i], theta[j] - theta[i]);
        out.p_from[k] = f.p;
        out.q_from[k] = f.q;
        out.p_to[k] = t.p;
        out.q_to[k] = t.q;
    }
    return out;
}

/// Sending-end flows for a batch of states (one sample per column).
/// `v` and `theta` are n_bus x m; `p` and `q` are resized to n_branch x m.
inline void sending_end_flows(const Eigen::MatrixXd& v, const Eigen::MatrixXd& theta, std::span<const Branch> branches,
                              Eigen::MatrixXd& p, Eigen::MatrixXd& q) {
    const auto nb = static_cast<Eigen::Index>(branches.size());
    p.resize(nb, v.cols());
    q.resize(nb, v.cols());
    for (Eigen::Index s = 0; s < v.cols(); ++s) {
        for (Eigen::Index k = 0; k < nb; ++k) {
            const Branch& br = branches[k];
            const FlowPair f = branch_flow(br.g_series, br.b_series, v(br.from_bus, s), v(br.to_bus, s),
                                           theta(br.from_bus, s) - theta(br.to_bus, s));
            p(k, s) = f.p;
            q(k, s) = f.q;
        }
    }
}

/// Partials of the sending-end flows with respect to the end-bus states.
/// `_i` is the from bus, `_j` the to bus.
struct BranchSensitivities {
    Eigen::VectorXd dp_dtheta_i, dp_dtheta_j;
    Eigen::VectorXd dq_dtheta_i, dq_dtheta_j;
    Eigen::VectorXd dp_dv_i, dp_dv_j;
    Eigen::VectorXd dq_dv_i, dq_dv_j;
};

struct SensitivityRow {
    double dp_dtheta_i, dq_dtheta_i;
    double dp_dv_i, dp_dv_j;
    double dq_dv_i, dq_dv_j;
};

inline SensitivityRow branch_sensitivity(double g, double b, double vi, double vj, double theta_ij) {
    const double c = std::cos(theta_ij), s = std::sin(theta_ij);
    const double vivj = vi * vj;
    const double gc_bs = g * c + b * s;
    const double bc_gs = b * c - g * s;
    return {g * vivj * s - b * vivj * c,
            -b * vivj * s - g * vivj * c,
            2.0 * g * vi - vj * gc_bs,
            -vi * gc_bs,
            -2.0 * b * vi + vj * bc_gs,
            vi * bc_gs};
}

inline BranchSensitivities branch_sensitivities(const Eigen::VectorXd& v, const Eigen::VectorXd& theta,
                                                std::span<const Branch> branches) {
    const auto nb = static_cast<Eigen::Index>(branches.size());
    BranchSensitivities s;
    for (auto* vec : {&s.dp_dtheta_i, &s.dp_dtheta_j, &s.dq_dtheta_i, &s.dq_dtheta_j, &s.dp_dv_i, &s.dp_dv_j,
                      &s.dq_dv_i, &s.dq_dv_j})
        vec->resize(nb);
    for (Eigen::Index k = 0; k < nb; ++k) {
        const Branch& br = branches[k];
        const int i = br.from_bus, j = br.to_bus;
        const SensitivityRow r = branch_sensitivity(br.g_series, br.b_series, v[i], v[j], theta[i] - theta[j]);
        s.dp_dtheta_i[k] = r.dp_dtheta_i;
        s.dp_dtheta_j[k] = -r.dp_dtheta_i;
        s.dq_dtheta_i[k] = r.dq_dtheta_i;
        s.dq_dtheta_j[k] = -r.dq_dtheta_i;
        s.dp_dv_i[k] = r.dp_dv_i;
        s.dp_dv_j[k] = r.dp_dv_j;
        s.dq_dv_i[k] = r.dq_dv_i;
        s.dq_dv_j[k] = r.dq_dv_j;
    }
    return s;
}

/// Bus injections reconstructed from branch flows plus shunt consumption.
/// Matches the nodal equations exactly only under the series branch model.
inline Injections injections_from_flows(const NetworkCase& c, const Eigen::VectorXd& v, const Eigen::VectorXd& theta) {
    const BranchFlows f = branch_flows(v, theta, c.branches);
    Injections inj{Eigen::VectorXd::Zero(c.n_bus()), Eigen::VectorXd::Zero(c.n_bus())};
    for (int k = 0; k < c.n_branch(); ++k) {
        const Branch& br = c.branches[k];
        inj.p[br.from_bus] += f.p_from[k];
        inj.q[br.from_bus] += f.q_from[k];
        inj.p[br.to_bus] += f.p_to[k];
        inj.q[br.to_bus] += f.q_to[k];
    }
    for (const auto& b : c.buses) {
        const double v2 = v[b.id] * v[b.id];
        inj.p[b.id] += b.shunt_g * v2;
        inj.q[b.id] -= b.shunt_b * v2;
    }
    return inj;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string solution_to_csv(const NetworkCase& c, const PowerFlowSolution& sol) {
    std::ostringstream out;
    out.precision(17);
    out << "bus,v,theta\n";
    for (const auto& b : c.buses) out << b.number << ',' << sol.v[b.id] << ',' << sol.theta[b.id] << '\n';
    return out.str();
}

inline nlohmann::ordered_json solution_to_json(const NetworkCase& c, const PowerFlowSolution& sol) {
    nlohmann::ordered_json j;
    j["converged"] = sol.converged;
    j["iterations"] = sol.iterations;
    j["max_mismatch"] = sol.max_mismatch;
    auto& buses = j["buses"] = nlohmann::ordered_json::array();
    for (const auto& b : c.buses) buses.push_back({{"bus", b.number}, {"v", sol.v[b.id]}, {"theta", sol.theta[b.id]}});
    return j;
}

} // namespace ppfnn
