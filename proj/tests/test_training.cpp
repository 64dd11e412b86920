#include <cmath>

#include <gtest/gtest.h>

#include "ppfnn/training.hpp"
#include "gradient_oracle.hpp"
#include "test_support.hpp"

using namespace ppfnn;
using namespace ppfnn::testing;

namespace {

struct SilenceLog {
    SilenceLog() { set_log_sink({}); }
} silence;

const Dataset& two_bus_data() {
    static const Dataset d = [] {
        const auto c = ppfnn::testing::two_bus();
        return build_dataset(c, relative_load_spec(c, 0.1), 50, 2, {40, 5, 5}, {1});
    }();
    return d;
}

Batch full_batch(const Dataset& d) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(d.n_samples()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
    return d.gather(idx);
}

} // namespace

TEST(Mode, ParseAndTraits) {
    EXPECT_EQ(parse_mode("M4"), Mode::M4);
    EXPECT_EQ(parse_mode("m0"), Mode::M0);
    EXPECT_EQ(to_string(Mode::M6), "M6");
    EXPECT_THROW(parse_mode("M7"), InvalidArgument);
    EXPECT_EQ(traits(Mode::M0).output, Activation::Relu);
    EXPECT_EQ(traits(Mode::M3).init, InitScheme::Balanced);
    EXPECT_FALSE(traits(Mode::M3).penalty);
    EXPECT_TRUE(traits(Mode::M5).penalty);
    EXPECT_FALSE(traits(Mode::M5).guide_v);
    EXPECT_FALSE(traits(Mode::M6).reactive);
}

TEST(Loss, StandardExamples) {
    Eigen::MatrixXd a(1, 1), b(1, 1);
    a << 0.7;
    b << 0.5;
    EXPECT_NEAR(loss_standard(a, b), 0.02, 1e-15);
    EXPECT_EQ(loss_standard(b, b), 0.0);
    const Eigen::MatrixXd p = Eigen::MatrixXd::Random(4, 6), q = Eigen::MatrixXd::Random(4, 6);
    Eigen::MatrixXd p2(4, 12), q2(4, 12);
    p2 << p, p;
    q2 << q, q;
    EXPECT_NEAR(loss_standard(p2, q2), loss_standard(p, q), 1e-14);
    EXPECT_THROW(loss_standard(p, Eigen::MatrixXd::Zero(3, 6)), ShapeError);
}

TEST(Loss, ModifiedIsZeroAtLabels) {
    const Dataset& d = four_bus_data();
    const Batch b = full_batch(d);
    const LossParts lp = loss_modified(PenaltyContext::from(d), b.y, b.y, b.p, b.q);
    EXPECT_EQ(lp.standard, 0.0);
    EXPECT_LE(lp.j_p, 1e-18);
    EXPECT_LE(lp.j_q, 1e-18);
}

TEST(Loss, AnglePerturbationMatchesSensitivityOracle) {
    const Dataset& d = four_bus_data();
    const Batch b = full_batch(d);
    const int nb = d.n_bus(), bus = 2, sample = 3;
    const double delta = 1e-5;
    Eigen::MatrixXd y = b.y;
    y(nb + bus, sample) += delta;
    const double jp = loss_modified(PenaltyContext::from(d), y, b.y, b.p, b.q).j_p;

    const Eigen::MatrixXd yr = d.y_norm.invert(b.y);
    const auto sens = branch_sensitivities(yr.col(sample).head(nb), yr.col(sample).tail(nb), d.grid.branches);
    const double std_theta = d.y_norm.scale()[nb + bus];
    double expect = 0.0;
    for (int k = 0; k < d.grid.n_branch(); ++k) {
        const auto& br = d.grid.branches[k];
        const double s = br.from_bus == bus ? sens.dp_dtheta_i[k] : br.to_bus == bus ? sens.dp_dtheta_j[k] : 0.0;
        const double e = s * delta * std_theta / d.p_norm.scale()[k];
        expect += 0.5 * e * e / static_cast<double>(b.size());
    }
    EXPECT_GT(expect, 0.0);
    EXPECT_NEAR(jp, expect, 1e-3 * expect);
}

TEST(Loss, PenaltyIndependentOfFlowUnits) {
    const Dataset& d = four_bus_data();
    const Eigen::MatrixXd p = d.p_norm.invert(d.p_br);
    const Eigen::MatrixXd mw = p * d.grid.base_mva;
    const auto nz = fit_normalizer(p), nz_mw = fit_normalizer(mw);
    EXPECT_LE((nz.apply(p) - nz_mw.apply(mw)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AlphaBeta, Examples) {
    const int nb = 2;
    Eigen::MatrixXd d1(4, 2), d2 = Eigen::MatrixXd::Zero(4, 2), d3 = Eigen::MatrixXd::Zero(4, 2);
    d1 << 1, -3, 2, 0.5, -4, 1, 2, 2;
    auto [a0, b0] = compute_alpha_beta(d1, d2, d3, nb);
    EXPECT_EQ(a0, 0.0);
    EXPECT_EQ(b0, 0.0);
    d2.topRows(2) = d1.topRows(2);
    d3.bottomRows(2) = -d1.bottomRows(2);
    auto [a1, b1] = compute_alpha_beta(d1, d2, d3, nb);
    EXPECT_EQ(a1, 0.5);
    EXPECT_EQ(b1, 0.5);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::MatrixXd r1 = Eigen::MatrixXd::Random(6, 5), r2 = Eigen::MatrixXd::Random(6, 5),
                              r3 = Eigen::MatrixXd::Random(6, 5);
        const auto [a, b] = compute_alpha_beta(r1, r2, r3, 3);
        const Eigen::MatrixXd s = r2 + r3;
        EXPECT_NEAR(0.5 * r1.topRows(3).cwiseAbs().maxCoeff(), a * s.topRows(3).cwiseAbs().maxCoeff(), 1e-15);
        EXPECT_NEAR(0.5 * r1.bottomRows(3).cwiseAbs().maxCoeff(), b * s.bottomRows(3).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(Backprop, PlainModesUseD1Only) {
    const Dataset& d = four_bus_data();
    const auto ctx = PenaltyContext::from(d);
    const Batch b = random_batch(d, 1, 8);
    for (Mode mode : {Mode::M0, Mode::M1, Mode::M3}) {
        const auto m = random_model(mode, 1, 8, 8);
        ForwardTrace t;
        forward(m, b.x, &t);
        const auto g = backprop(mode, m, t, b, ctx);
        EXPECT_TRUE(g.dl == g.d1);
        EXPECT_TRUE(g.d2.isZero(0.0));
        EXPECT_EQ(g.alpha, 0.0);
    }
}

TEST(Backprop, ZeroWeightsReduceToPlainUpdate) {
    const Dataset& d = four_bus_data();
    const auto ctx = PenaltyContext::from(d);
    const Batch b = random_batch(d, 2, 8);
    const auto m = random_model(Mode::M4, 2, 8, 8);
    ForwardTrace t;
    forward(m, b.x, &t);
    const auto g4 = backprop(Mode::M4, m, t, b, ctx, {0.0, 0.0, std::nullopt});
    const auto g3 = backprop(Mode::M3, m, t, b, ctx);
    EXPECT_TRUE(g4.dl == g3.dl);
    for (int l = 0; l < m.n_layers(); ++l) {
        EXPECT_TRUE(g4.dw[l] == g3.dw[l]);
        EXPECT_TRUE(g4.db[l] == g3.db[l]);
    }
    // And the optimizer step is the same.
    TrainConfig cfg;
    auto m4 = m, m3 = m;
    auto s4 = RmspropState::zeros(m), s3 = RmspropState::zeros(m);
    rmsprop_step(m4, s4, g4, cfg);
    rmsprop_step(m3, s3, g3, cfg);
    EXPECT_TRUE(m4 == m3);
}

TEST(Backprop, ModeLattice) {
    const Dataset& d = four_bus_data();
    const auto ctx = PenaltyContext::from(d);
    const Batch b = random_batch(d, 3, 10);
    const auto m = random_model(Mode::M4, 3, 8, 8);
    ForwardTrace t;
    forward(m, b.x, &t);
    const int nb = d.n_bus();
    const auto g4 = backprop(Mode::M4, m, t, b, ctx);
    const auto g5 = backprop(Mode::M5, m, t, b, ctx);
    const auto g6 = backprop(Mode::M6, m, t, b, ctx);
    const auto g6r = backprop(Mode::M6, m, t, b, ctx, {std::nullopt, std::nullopt, PenaltyFlags{false, true}});
    EXPECT_GT(g4.alpha, 0.0);
    EXPECT_GT(g4.beta, 0.0);
    // M5 keeps M4's angle rows and drops the magnitude guidance.
    EXPECT_TRUE(g5.dl.bottomRows(nb) == g4.dl.bottomRows(nb));
    EXPECT_TRUE(g5.dl.topRows(nb) == g5.d1.topRows(nb));
    EXPECT_EQ(g5.beta, g4.beta);
    EXPECT_EQ(g5.alpha, 0.0);
    // M6 uses the active term only; re-enabling the reactive term gives M5.
    EXPECT_TRUE(g6.d3.isZero(0.0));
    EXPECT_EQ(g6.loss.j_q, 0.0);
    EXPECT_TRUE(g6.dl.bottomRows(nb) == g6.d1.bottomRows(nb) + g6.beta * g6.d2.bottomRows(nb));
    EXPECT_TRUE(g6.dl.topRows(nb) == g6.d1.topRows(nb));
    EXPECT_TRUE(g6r.dl == g5.dl);
    // Weight identity on the angle rows.
    const Eigen::MatrixXd s = g6.d2.bottomRows(nb);
    EXPECT_NEAR(g6.beta * s.cwiseAbs().maxCoeff(), 0.5 * g6.d1.bottomRows(nb).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Backprop, TwoBusHandCalculation) {
    const Dataset& d = two_bus_data();
    const auto ctx = PenaltyContext::from(d);
    std::vector<Eigen::Index> one{0};
    const Batch b = d.gather(one);
    // Prediction equals the labels except for a shifted bus-2 angle.
    Eigen::MatrixXd yhat = b.y;
    yhat(3, 0) += 0.3;
    const auto t = penalty_terms(ctx, yhat, b.p, b.q, {true, true});

    const Eigen::MatrixXd yr = d.y_norm.invert(yhat);
    const double v1 = yr(0, 0), v2 = yr(1, 0), th1 = yr(2, 0), th2 = yr(3, 0);
    // Lossless line with x = 0.1: P = 10 V1 V2 sin(th1 - th2), dP/dth2 = -10 V1 V2 cos(th1 - th2).
    const double p_hat = 10 * v1 * v2 * std::sin(th1 - th2);
    const double p_true = d.p_norm.invert(b.p)(0, 0);
    const double sp = d.p_norm.std[0], st = d.y_norm.std[3];
    const double expect = (p_hat - p_true) / (sp * sp) * (-10 * v1 * v2 * std::cos(th1 - th2)) * st;
    EXPECT_NEAR(t.d2(3, 0), expect, 1e-12 * std::abs(expect));
    // Slack angle and voltage are constant in the data; their entries carry a unit scale.
    EXPECT_NEAR(t.d2(2, 0), -expect / st, 1e-12 * std::abs(expect / st));
}

class GradientCheck : public ::testing::TestWithParam<Mode> {};

TEST_P(GradientCheck, MatchesFiniteDifferences) {
    double worst = 0.0;
    for (int instance = 0; instance < 20; ++instance) worst = std::max(worst, gradient_check(GetParam(), instance));
    RecordProperty("worst_relative_error", nlohmann::json(worst).dump());
    EXPECT_LE(worst, 1e-6) << to_string(GetParam());
}

INSTANTIATE_TEST_SUITE_P(AllModes, GradientCheck,
                         ::testing::Values(Mode::M0, Mode::M1, Mode::M2, Mode::M3, Mode::M4, Mode::M5, Mode::M6),
                         [](const auto& info) { return to_string(info.param); });

TEST(Rmsprop, FirstStepExample) {
    auto m = make_model({1, 1});
    m.weights[0](0, 0) = 0.5;
    GradientBundle g;
    g.dw = {Eigen::MatrixXd::Ones(1, 1)};
    g.db = {Eigen::VectorXd::Zero(1)};
    auto s = RmspropState::zeros(m);
    rmsprop_step(m, s, g, TrainConfig{});
    EXPECT_NEAR(s.rw[0](0, 0), 0.01, 1e-17);
    const double step = 0.5 - m.weights[0](0, 0);
    EXPECT_NEAR(step, 0.0099999950000025, 1e-12 * 0.01);
    EXPECT_EQ(m.biases[0][0], 0.0);
    EXPECT_EQ(s.t, 1);
}

TEST(Rmsprop, ZeroGradientDecaysState) {
    auto m = make_model({2, 2});
    m.weights[0].setConstant(0.3);
    auto s = RmspropState::zeros(m);
    s.rw[0].setConstant(0.04);
    GradientBundle g;
    g.dw = {Eigen::MatrixXd::Zero(2, 2)};
    g.db = {Eigen::VectorXd::Zero(2)};
    rmsprop_step(m, s, g, TrainConfig{});
    EXPECT_TRUE(m.weights[0].isApproxToConstant(0.3, 0.0));
    EXPECT_NEAR(s.rw[0](0, 0), 0.0396, 1e-17);
}

TEST(Rmsprop, SignPreservingAndReproducible) {
    const Dataset& d = four_bus_data();
    const auto ctx = PenaltyContext::from(d);
    const Batch b = random_batch(d, 4, 10);
    const auto m0 = random_model(Mode::M4, 4, 8, 8);
    ForwardTrace t;
    forward(m0, b.x, &t);
    const auto g = backprop(Mode::M4, m0, t, b, ctx);
    auto m1 = m0, m2 = m0;
    auto s1 = RmspropState::zeros(m0), s2 = s1;
    rmsprop_step(m1, s1, g, TrainConfig{});
    rmsprop_step(m2, s2, g, TrainConfig{});
    EXPECT_TRUE(m1 == m2);
    for (int l = 0; l < m0.n_layers(); ++l) {
        const Eigen::ArrayXXd delta = (m0.weights[l] - m1.weights[l]).array();
        EXPECT_TRUE(((delta * g.dw[l].array()) >= 0.0).all());
        EXPECT_TRUE((s1.rw[l].array() >= 0.0).all());
    }
}

TEST(Config, JsonRoundTripAndValidation) {
    TrainConfig c;
    c.mode = Mode::M6;
    c.hidden = {7, 9};
    c.seed = 99;
    c.thresholds.flow_mw = 2.5;
    const auto back = TrainConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
    EXPECT_THROW(TrainConfig::from_json(nlohmann::json::parse(R"({"rho": 1.0})")), InvalidArgument);
    EXPECT_THROW(TrainConfig::from_json(nlohmann::json::parse(R"({"batch_size": 0})")), InvalidArgument);
    EXPECT_THROW(TrainConfig::from_json(nlohmann::json::parse(R"({"learning_rate": 0.1})")), InvalidArgument);
    EXPECT_THROW(TrainConfig::from_json(nlohmann::json::parse(R"({"eta": "fast"})")), InvalidArgument);
}

TEST(Shuffle, PermutationAndDeterminism) {
    std::vector<Eigen::Index> a(100), b;
    for (int i = 0; i < 100; ++i) a[i] = i;
    b = a;
    shuffle_epoch(a, 3, 1);
    shuffle_epoch(b, 3, 1);
    EXPECT_EQ(a, b);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
    auto c = b;
    shuffle_epoch(c, 3, 2);
    EXPECT_NE(c, b);
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
    TrainConfig cfg;
    cfg.max_epochs = 0;
    cfg.hidden = {6};
    const auto r = train(cfg, four_bus_data());
    EXPECT_TRUE(r.history.epochs.empty());
    EXPECT_EQ(r.history.stop_reason, "max_epochs");
    auto expect = make_model({8, 6, 8});
    init_balanced(expect, cfg.seed);
    EXPECT_TRUE(r.model.weights[0] == expect.weights[0]);
}

TEST(Train, DeterministicAndBestSnapshot) {
    TrainConfig cfg;
    cfg.hidden = {10, 10};
    cfg.batch_size = 8;
    cfg.max_epochs = 30;
    cfg.patience = 5;
    cfg.eta = 0.01;
    const Dataset& d = four_bus_data();
    const auto a = train(cfg, d, d.grid);
    const auto b = train(cfg, d);
    EXPECT_TRUE(a.model == b.model);
    ASSERT_FALSE(a.history.epochs.empty());
    double best = 1e300;
    for (const auto& e : a.history.epochs) best = std::min(best, e.val_loss);
    const double returned = loss_standard(predict(a.model, detail::columns(d.x, d.validation)),
                                          detail::columns(d.y, d.validation));
    EXPECT_EQ(returned, best);
    EXPECT_EQ(a.history.epochs[a.history.best_epoch - 1].val_loss, best);
    for (std::size_t i = 0; i < a.history.epochs.size(); ++i) EXPECT_EQ(a.history.epochs[i].epoch, static_cast<int>(i + 1));
    EXPECT_FALSE(a.history.stop_reason.empty());
}

TEST(Train, ConstantOutputsArePinned) {
    TrainConfig cfg;
    cfg.hidden = {10};
    cfg.batch_size = 8;
    cfg.max_epochs = 5;
    const Dataset& d = four_bus_data();
    Trainer tr(cfg, d);
    for (int e = 0; e < 5; ++e) tr.run_epoch();
    ASSERT_FALSE(tr.pinned_outputs().empty());
    const auto y = predict(tr.model(), d.x);
    for (auto r : tr.pinned_outputs()) EXPECT_TRUE(y.row(r).isZero(0.0));
    const auto phys = d.y_norm.invert(y);
    EXPECT_EQ(phys(d.n_bus() + d.grid.slack(), 0), 0.0);
}

TEST(Train, DivergenceIsReported) {
    TrainConfig cfg;
    cfg.hidden = {6};
    cfg.eta = 1e300;
    cfg.max_epochs = 3;
    try {
        train(cfg, four_bus_data());
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.epoch(), 1);
    }
}

TEST(Train, HistoryCsv) {
    TrainHistory h;
    h.epochs.push_back({1, 0.5, 0.25, 0.1, 0.2, 0.3, 0.4, 1.5});
    EXPECT_EQ(h.to_csv(), "epoch,train_loss,val_loss,J_P,J_Q,alpha,beta,seconds\n1,0.5,0.25,0.10000000000000001,"
                          "0.20000000000000001,0.29999999999999999,0.40000000000000002,1.5\n");
}
