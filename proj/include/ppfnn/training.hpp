#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ppfnn/error.hpp"
#include "ppfnn/grid.hpp"
#include "ppfnn/metrics.hpp"
#include "ppfnn/nn.hpp"
#include "ppfnn/powerflow.hpp"
#include "ppfnn/random.hpp"
#include "ppfnn/sampling.hpp"

namespace ppfnn {

// ---------------------------------------------------------------------------
// Modes
//
//   M0  all-ReLU network, He init, standard loss
//   M1  linear output, He init, standard loss
//   M2  M1 with the branch-flow penalty
//   M3  M1 with the balanced init
//   M4  penalty and balanced init
//   M5  M4 without voltage-magnitude guidance: V rows get d1 only
//   M6  M5 without reactive guidance: theta rows get d1 + beta * d2 only
//
// In M5 and M6 the weight on the angle rows is beta, computed from the angle
// rows exactly as in M4, so M5's angle rows coincide with M4's.

enum class Mode { M0, M1, M2, M3, M4, M5, M6 };

inline std::string to_string(Mode m) { return "M" + std::to_string(static_cast<int>(m)); }

inline Mode parse_mode(std::string_view s) {
    if (s.size() == 2 && (s[0] == 'M' || s[0] == 'm') && s[1] >= '0' && s[1] <= '6')
        return static_cast<Mode>(s[1] - '0');
    throw InvalidArgument("unknown mode '" + std::string(s) + "' (expected M0..M6)");
}

struct ModeTraits {
    Activation output;
    InitScheme init;
    bool penalty;     ///< any branch-flow guidance
    bool guide_v;     ///< voltage-magnitude rows receive guidance
    bool reactive;    ///< reactive-flow terms are evaluated
};

inline ModeTraits traits(Mode m) {
    switch (m) {
    case Mode::M0: return {Activation::Relu, InitScheme::He, false, false, false};
    case Mode::M1: return {Activation::Linear, InitScheme::He, false, false, false};
    case Mode::M2: return {Activation::Linear, InitScheme::He, true, true, true};
    case Mode::M3: return {Activation::Linear, InitScheme::Balanced, false, false, false};
    case Mode::M4: return {Activation::Linear, InitScheme::Balanced, true, true, true};
    case Mode::M5: return {Activation::Linear, InitScheme::Balanced, true, false, true};
    case Mode::M6: return {Activation::Linear, InitScheme::Balanced, true, false, false};
    }
    throw InvalidArgument("bad mode");
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
    Mode mode = Mode::M4;
    std::vector<int> hidden{100, 100, 100};
    double eta = 1e-3;
    double rho = 0.99;
    double epsilon = 1e-8;
    int batch_size = 100;
    int max_epochs = 1000;
    int patience = 20;          ///< epochs without validation improvement; 0 disables
    std::uint64_t seed = 1;
    bool stop_on_accuracy = false;
    int accuracy_every = 1;     ///< epochs between index checks
    double target_fraction = 0.05;
    Thresholds thresholds{};
    /// Keep outputs that are constant in the training data (slack angle, PV
    /// voltages) at exactly zero by fixing their last-layer rows.
    bool pin_constant_outputs = true;

    void validate() const {
        if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
        if (!(rho > 0.0 && rho < 1.0)) throw InvalidArgument("rho must lie in (0, 1)");
        if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
        if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
        if (max_epochs < 0 || patience < 0) throw InvalidArgument("epoch counts must be non-negative");
        if (accuracy_every < 1) throw InvalidArgument("accuracy_every must be at least 1");
        for (int h : hidden)
            if (h < 1) throw InvalidArgument("hidden widths must be positive");
    }

    nlohmann::ordered_json to_json() const {
        return {{"mode", to_string(mode)},
                {"hidden", hidden},
                {"eta", eta},
                {"rho", rho},
                {"epsilon", epsilon},
                {"batch_size", batch_size},
                {"max_epochs", max_epochs},
                {"patience", patience},
                {"seed", seed},
                {"stop_on_accuracy", stop_on_accuracy},
                {"accuracy_every", accuracy_every},
                {"target_fraction", target_fraction},
                {"thresholds", {{"v", thresholds.v}, {"theta", thresholds.theta}, {"flow_mw", thresholds.flow_mw}}},
                {"pin_constant_outputs", pin_constant_outputs}};
    }

    /// Missing keys keep their defaults; unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        if (!j.is_object()) throw InvalidArgument("training config must be a JSON object");
        for (const auto& [key, value] : j.items()) {
            try {
                if (key == "mode") c.mode = parse_mode(value.get<std::string>());
                else if (key == "hidden") c.hidden = value.get<std::vector<int>>();
                else if (key == "eta") c.eta = value.get<double>();
                else if (key == "rho") c.rho = value.get<double>();
                else if (key == "epsilon") c.epsilon = value.get<double>();
                else if (key == "batch_size") c.batch_size = value.get<int>();
                else if (key == "max_epochs") c.max_epochs = value.get<int>();
                else if (key == "patience") c.patience = value.get<int>();
                else if (key == "seed") c.seed = value.get<std::uint64_t>();
                else if (key == "stop_on_accuracy") c.stop_on_accuracy = value.get<bool>();
                else if (key == "accuracy_every") c.accuracy_every = value.get<int>();
                else if (key == "target_fraction") c.target_fraction = value.get<double>();
                else if (key == "pin_constant_outputs") c.pin_constant_outputs = value.get<bool>();
                else if (key == "thresholds") {
                    c.thresholds.v = value.value("v", c.thresholds.v);
                    c.thresholds.theta = value.value("theta", c.thresholds.theta);
                    c.thresholds.flow_mw = value.value("flow_mw", c.thresholds.flow_mw);
                } else
                    throw InvalidArgument("unknown training config key '" + key + "'");
            } catch (const nlohmann::json::exception& e) {
                throw InvalidArgument("training config key '" + key + "': " + e.what());
            }
        }
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Losses

/// (1 / 2m) * ||y_pred - y_label||^2 over all outputs and samples.
inline double loss_standard(const Eigen::MatrixXd& y_pred, const Eigen::MatrixXd& y_label) {
    if (y_pred.rows() != y_label.rows() || y_pred.cols() != y_label.cols())
        throw ShapeError("prediction and label shapes differ");
    if (y_pred.cols() == 0) return 0.0;
    return 0.5 * (y_pred - y_label).squaredNorm() / static_cast<double>(y_pred.cols());
}

/// Everything the branch-flow penalty needs besides the batch itself.
struct PenaltyContext {
    std::vector<Branch> branches;
    int n_bus = 0;
    Eigen::VectorXd y_mean, y_scale;
    Eigen::VectorXd p_mean, p_scale;
    Eigen::VectorXd q_mean, q_scale;

    static PenaltyContext from(const Dataset& d) {
        return {d.grid.branches, d.n_bus(), d.y_norm.mean, d.y_norm.scale(), d.p_norm.mean,
                d.p_norm.scale(), d.q_norm.mean, d.q_norm.scale()};
    }
};

struct LossParts {
    double standard = 0.0;
    double j_p = 0.0;
    double j_q = 0.0;

    double total() const { return standard + j_p + j_q; }
};

/// Branch-flow error terms at the predicted operating point.
struct PenaltyTerms {
    Eigen::MatrixXd d2, d3; ///< (2 n_bus) x m, in normalized output units
    double j_p = 0.0;
    double j_q = 0.0;
};

struct PenaltyFlags {
    bool guide_v = true;
    bool reactive = true;
};

/// Computes J_P, J_Q and their gradients with respect to the normalized
/// outputs (without the 1/m factor). Rows not requested by `flags` stay zero;
/// with reactive = false, J_Q is not evaluated and reported as 0.
inline PenaltyTerms penalty_terms(const PenaltyContext& ctx, const Eigen::MatrixXd& y_pred,
                                  const Eigen::MatrixXd& p_label, const Eigen::MatrixXd& q_label,
                                  const PenaltyFlags& flags) {
    const int nb = ctx.n_bus;
    const Eigen::Index m = y_pred.cols();
    const auto n_br = static_cast<Eigen::Index>(ctx.branches.size());
    if (y_pred.rows() != 2 * nb || p_label.rows() != n_br || q_label.rows() != n_br || p_label.cols() != m ||
        q_label.cols() != m)
        throw ShapeError("penalty inputs do not match the case");
    PenaltyTerms out{Eigen::MatrixXd::Zero(2 * nb, m), Eigen::MatrixXd::Zero(2 * nb, m), 0.0, 0.0};
    if (m == 0) return out;

    const Eigen::MatrixXd y = (y_pred.array().colwise() * ctx.y_scale.array()).matrix().colwise() + ctx.y_mean;
    double sp = 0.0, sq = 0.0;
    for (Eigen::Index s = 0; s < m; ++s) {
        const auto v = y.col(s).head(nb);
        const auto th = y.col(s).tail(nb);
        auto d2 = out.d2.col(s);
        auto d3 = out.d3.col(s);
        for (Eigen::Index k = 0; k < n_br; ++k) {
            const Branch& br = ctx.branches[static_cast<std::size_t>(k)];
            const int i = br.from_bus, j = br.to_bus;
            const double g = br.g_series, b = br.b_series;
            const double vi = v[i], vj = v[j];
            const double c = std::cos(th[i] - th[j]), sn = std::sin(th[i] - th[j]);
            const double vivj = vi * vj, d = vi * vi - vivj * c;

            const double e_p = (g * d - b * vivj * sn - ctx.p_mean[k]) / ctx.p_scale[k] - p_label(k, s);
            sp += e_p * e_p;
            const double w_p = e_p / ctx.p_scale[k];
            const double dp_dth = g * vivj * sn - b * vivj * c;
            d2[nb + i] += w_p * dp_dth;
            d2[nb + j] -= w_p * dp_dth;
            if (flags.guide_v) {
                const double gc_bs = g * c + b * sn;
                d2[i] += w_p * (2 * g * vi - vj * gc_bs);
                d2[j] -= w_p * (vi * gc_bs);
            }
            if (!flags.reactive) continue;

            const double e_q = (-b * d - g * vivj * sn - ctx.q_mean[k]) / ctx.q_scale[k] - q_label(k, s);
            sq += e_q * e_q;
            const double w_q = e_q / ctx.q_scale[k];
            const double dq_dth = -b * vivj * sn - g * vivj * c;
            d3[nb + i] += w_q * dq_dth;
            d3[nb + j] -= w_q * dq_dth;
            if (flags.guide_v) {
                const double bc_gs = b * c - g * sn;
                d3[i] += w_q * (-2 * b * vi + vj * bc_gs);
                d3[j] += w_q * (vi * bc_gs);
            }
        }
    }
    out.d2.array().colwise() *= ctx.y_scale.array();
    out.d3.array().colwise() *= ctx.y_scale.array();
    out.j_p = 0.5 * sp / static_cast<double>(m);
    out.j_q = 0.5 * sq / static_cast<double>(m);
    return out;
}

/// Standard loss plus both branch-flow penalties.
inline LossParts loss_modified(const PenaltyContext& ctx, const Eigen::MatrixXd& y_pred, const Eigen::MatrixXd& y_label,
                               const Eigen::MatrixXd& p_label, const Eigen::MatrixXd& q_label) {
    const PenaltyTerms t = penalty_terms(ctx, y_pred, p_label, q_label, {false, true});
    return {loss_standard(y_pred, y_label), t.j_p, t.j_q};
}

// ---------------------------------------------------------------------------
// Backpropagation

/// 0.5 * max|d1| / max|d2 + d3| on the V rows (alpha) and theta rows (beta);
/// a zero denominator gives a zero weight.
inline std::pair<double, double> compute_alpha_beta(const Eigen::MatrixXd& d1, const Eigen::MatrixXd& d2,
                                                    const Eigen::MatrixXd& d3, int n_bus) {
    auto weight = [](const auto& a, const auto& s) {
        if (a.size() == 0) return 0.0;
        const double den = s.cwiseAbs().maxCoeff();
        return den == 0.0 ? 0.0 : 0.5 * a.cwiseAbs().maxCoeff() / den;
    };
    const Eigen::MatrixXd s = d2 + d3;
    return {weight(d1.topRows(n_bus), s.topRows(n_bus)), weight(d1.bottomRows(n_bus), s.bottomRows(n_bus))};
}

struct GradientBundle {
    Eigen::MatrixXd d1, d2, d3, dl;
    double alpha = 0.0;
    double beta = 0.0;
    LossParts loss;
    std::vector<Eigen::MatrixXd> dw;
    std::vector<Eigen::VectorXd> db;
};

/// Overrides for analysis: frozen weights and penalty flags.
struct BackpropOptions {
    std::optional<double> alpha;
    std::optional<double> beta;
    std::optional<PenaltyFlags> flags;
};

/// Output-layer error for `mode` followed by the chain rule through the hidden
/// layers. `trace` must come from forward() on `batch.x`.
inline GradientBundle backprop(Mode mode, const DnnModel& model, const ForwardTrace& trace, const Batch& batch,
                               const PenaltyContext& ctx, const BackpropOptions& options = {}) {
    const Eigen::MatrixXd& y_pred = trace.output();
    if (y_pred.rows() != batch.y.rows() || y_pred.cols() != batch.y.cols())
        throw ShapeError("trace does not match the batch labels");
    const auto m = static_cast<double>(y_pred.cols());
    const ModeTraits tr = traits(mode);
    const int nb = static_cast<int>(y_pred.rows() / 2);

    GradientBundle g;
    g.d1 = y_pred - batch.y;
    g.loss.standard = 0.5 * g.d1.squaredNorm() / m;
    const PenaltyFlags flags = options.flags.value_or(PenaltyFlags{tr.guide_v, tr.reactive});
    if (tr.penalty) {
        PenaltyTerms t = penalty_terms(ctx, y_pred, batch.p, batch.q, flags);
        g.d2 = std::move(t.d2);
        g.d3 = std::move(t.d3);
        g.loss.j_p = t.j_p;
        g.loss.j_q = flags.reactive ? t.j_q : 0.0;
        const auto [a, b] = compute_alpha_beta(g.d1, g.d2, g.d3, nb);
        g.alpha = options.alpha.value_or(a);
        g.beta = options.beta.value_or(b);
        g.dl = g.d1;
        if (flags.guide_v) g.dl.topRows(nb) += g.alpha * (g.d2.topRows(nb) + g.d3.topRows(nb));
        g.dl.bottomRows(nb) += g.beta * (g.d2.bottomRows(nb) + g.d3.bottomRows(nb));
    } else {
        g.d2 = Eigen::MatrixXd::Zero(y_pred.rows(), y_pred.cols());
        g.d3 = g.d2;
        g.dl = g.d1;
    }

    const int n_layers = model.n_layers();
    g.dw.resize(n_layers);
    g.db.resize(n_layers);
    Eigen::MatrixXd delta = g.dl;
    if (model.output_activation == Activation::Relu)
        delta.array() *= (trace.z.back().array() > 0.0).cast<double>();
    for (int i = n_layers - 1; i >= 0; --i) {
        g.dw[i].noalias() = delta * trace.y[i].transpose() / m;
        g.db[i] = delta.rowwise().sum() / m;
        if (!g.dw[i].allFinite() || !g.db[i].allFinite())
            throw Error("non-finite gradient in layer " + std::to_string(i));
        if (i > 0) {
            Eigen::MatrixXd next = model.weights[i].transpose() * delta;
            next.array() *= (trace.z[i - 1].array() > 0.0).cast<double>();
            delta = std::move(next);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// RMSProp

struct RmspropState {
    std::vector<Eigen::MatrixXd> rw;
    std::vector<Eigen::VectorXd> rb;
    long long t = 0;

    static RmspropState zeros(const DnnModel& m) {
        RmspropState s;
        for (int i = 0; i < m.n_layers(); ++i) {
            s.rw.emplace_back(Eigen::MatrixXd::Zero(m.weights[i].rows(), m.weights[i].cols()));
            s.rb.emplace_back(Eigen::VectorXd::Zero(m.biases[i].size()));
        }
        return s;
    }
};

/// R <- rho R + (1 - rho) g^2, then p <- p - eta g / sqrt(R + eps).
inline void rmsprop_step(DnnModel& model, RmspropState& state, const GradientBundle& grads, const TrainConfig& cfg) {
    if (state.rw.size() != model.weights.size() || grads.dw.size() != model.weights.size())
        throw ShapeError("optimizer state does not match the model");
    const double rho = cfg.rho, eta = cfg.eta, eps = cfg.epsilon;
    for (int i = 0; i < model.n_layers(); ++i) {
        state.rw[i] = rho * state.rw[i] + (1 - rho) * grads.dw[i].cwiseProduct(grads.dw[i]);
        model.weights[i].array() -= eta * grads.dw[i].array() / (state.rw[i].array() + eps).sqrt();
        state.rb[i] = rho * state.rb[i] + (1 - rho) * grads.db[i].cwiseProduct(grads.db[i]);
        model.biases[i].array() -= eta * grads.db[i].array() / (state.rb[i].array() + eps).sqrt();
    }
    ++state.t;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double j_p = 0.0; ///< validation penalties
    double j_q = 0.0;
    double alpha = 0.0; ///< batch means
    double beta = 0.0;
    double seconds = 0.0; ///< training pass only
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::vector<std::pair<int, MetricsReport>> accuracy_checks;
    std::string stop_reason;
    int best_epoch = 0;

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "epoch,train_loss,val_loss,J_P,J_Q,alpha,beta,seconds\n";
        for (const auto& e : epochs)
            out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.j_p << ',' << e.j_q << ','
                << e.alpha << ',' << e.beta << ',' << e.seconds << '\n';
        return out.str();
    }
};

namespace detail {

/// Unbiased enough for shuffling: multiply-shift on 64 random bits.
inline std::size_t bounded(Philox4x32& rng, std::size_t bound) {
    const std::uint64_t r = (static_cast<std::uint64_t>(rng()) << 32) | rng();
    return static_cast<std::size_t>((static_cast<unsigned __int128>(r) * bound) >> 64);
}

} // namespace detail

/// Deterministic per-epoch permutation of `idx` (stream {epoch, 0, 'SHUF'}).
inline void shuffle_epoch(std::vector<Eigen::Index>& idx, std::uint64_t seed, int epoch) {
    Philox4x32 rng(seed, static_cast<std::uint32_t>(epoch), 0, Philox4x32::kShuffle);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[detail::bounded(rng, i)]);
}

/// Epoch-at-a-time trainer. The dataset must outlive it.
class Trainer {
public:
    Trainer(TrainConfig config, const Dataset& data) : cfg_(std::move(config)), data_(data) {
        cfg_.validate();
        if (data.train.empty()) throw InvalidArgument("training split is empty");
        const ModeTraits tr = traits(cfg_.mode);
        std::vector<int> sizes{static_cast<int>(data.x.rows())};
        sizes.insert(sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
        sizes.push_back(static_cast<int>(data.y.rows()));
        model_ = make_model(sizes, tr.output);
        initialize(model_, tr.init, cfg_.seed);
        model_.input_norm = data.x_norm;
        model_.output_norm = data.y_norm;
        model_.info.case_name = data.grid.name;
        model_.info.mode = to_string(cfg_.mode);
        ctx_ = PenaltyContext::from(data);
        state_ = RmspropState::zeros(model_);
        order_ = data.train;
        if (cfg_.pin_constant_outputs) {
            for (Eigen::Index r = 0; r < data.y.rows(); ++r)
                if (data.y_norm.degenerate(r)) pinned_.push_back(r);
            for (auto r : pinned_) {
                model_.weights.back().row(r).setZero();
                model_.biases.back()[r] = 0.0;
            }
        }
        validation_ = detail::columns(data.x, data.validation);
    }

    const DnnModel& model() const { return model_; }
    const TrainConfig& config() const { return cfg_; }
    int epoch() const { return epoch_; }
    const std::vector<Eigen::Index>& pinned_outputs() const { return pinned_; }

    /// One pass over the shuffled training split followed by validation.
    EpochRecord run_epoch() {
        ++epoch_;
        EpochRecord rec;
        rec.epoch = epoch_;
        const auto t0 = std::chrono::steady_clock::now();
        shuffle_epoch(order_, cfg_.seed, epoch_);
        double sq = 0.0, alpha = 0.0, beta = 0.0;
        int batches = 0;
        ForwardTrace trace;
        const auto n = order_.size();
        for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(cfg_.batch_size)) {
            const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(cfg_.batch_size), n - b0);
            const Batch batch = data_.gather(std::span<const Eigen::Index>(order_).subspan(b0, len));
            forward(model_, batch.x, &trace);
            GradientBundle g = backprop(cfg_.mode, model_, trace, batch, ctx_);
            if (!std::isfinite(g.loss.standard)) throw DivergenceError("training loss is not finite", epoch_);
            sq += 2.0 * g.loss.standard * static_cast<double>(len);
            alpha += g.alpha;
            beta += g.beta;
            ++batches;
            for (auto r : pinned_) {
                g.dw.back().row(r).setZero();
                g.db.back()[r] = 0.0;
            }
            rmsprop_step(model_, state_, g, cfg_);
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.train_loss = 0.5 * sq / static_cast<double>(n);
        rec.alpha = alpha / batches;
        rec.beta = beta / batches;

        if (!data_.validation.empty()) {
            const Eigen::MatrixXd yv = predict(model_, validation_);
            const Batch labels = data_.gather(data_.validation);
            const LossParts lp = loss_modified(ctx_, yv, labels.y, labels.p, labels.q);
            rec.val_loss = lp.standard;
            rec.j_p = lp.j_p;
            rec.j_q = lp.j_q;
        } else {
            rec.val_loss = rec.train_loss;
        }
        if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss))
            throw DivergenceError("loss is not finite", epoch_);
        return rec;
    }

    MetricsReport validation_metrics() const {
        MetricsReport r = evaluate_indexes(model_, data_, data_.validation, cfg_.thresholds);
        r.n_epoch = epoch_;
        return r;
    }

private:
    TrainConfig cfg_;
    const Dataset& data_;
    DnnModel model_;
    PenaltyContext ctx_;
    RmspropState state_;
    std::vector<Eigen::Index> order_;
    std::vector<Eigen::Index> pinned_;
    Eigen::MatrixXd validation_;
    int epoch_ = 0;
};

struct TrainResult {
    DnnModel model;
    TrainHistory history;
};

/// Trains until patience runs out, max_epochs is reached, or (when enabled)
/// all four validation indexes reach the target fraction. Patience and
/// max_epochs stops return the best-validation snapshot; an accuracy stop
/// returns the model that met the targets.
inline TrainResult train(const TrainConfig& config, const Dataset& data) {
    Trainer trainer(config, data);
    TrainResult out{trainer.model(), {}};
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    for (int e = 1; e <= config.max_epochs; ++e) {
        const EpochRecord rec = trainer.run_epoch();
        out.history.epochs.push_back(rec);
        if (rec.val_loss < best) {
            best = rec.val_loss;
            out.model = trainer.model();
            out.history.best_epoch = e;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (config.stop_on_accuracy && e % config.accuracy_every == 0) {
            const MetricsReport r = trainer.validation_metrics();
            out.history.accuracy_checks.emplace_back(e, r);
            log_info(to_string(config.mode) + " epoch " + std::to_string(e) + ": p_vm " + std::to_string(r.p_vm) +
                     " p_va " + std::to_string(r.p_va) + " p_pf " + std::to_string(r.p_pf) + " p_qf " +
                     std::to_string(r.p_qf));
            if (r.all_at_most(config.target_fraction)) {
                out.model = trainer.model();
                out.history.stop_reason = "accuracy";
                return out;
            }
        }
        if (config.patience > 0 && since_best >= config.patience) {
            out.history.stop_reason = "patience";
            return out;
        }
    }
    out.history.stop_reason = "max_epochs";
    return out;
}

inline TrainResult train(const TrainConfig& config, const Dataset& data, const NetworkCase& c) {
    if (c.n_bus() != data.n_bus() || c.n_branch() != data.grid.n_branch())
        throw ShapeError("case and dataset disagree on bus or branch count");
    return train(config, data);
}

} // namespace ppfnn
