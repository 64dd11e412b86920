// ppfnn: command-line front end for dataset generation, training, evaluation
// and probabilistic power flow runs. Every subcommand prints a JSON summary to
// stdout (or to --json FILE) and exits nonzero on error.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ppfnn/ppfnn.hpp"

using namespace ppfnn;
using json = nlohmann::ordered_json;

namespace {

struct SpecArgs {
    std::string spec_file;
    double load_std = 0.1;

    void add(CLI::App* app) {
        app->add_option("--spec", spec_file, "uncertainty spec JSON (default: Normal loads with --load-std)");
        app->add_option("--load-std", load_std, "relative std of every load when no --spec is given");
    }
    nlohmann::json record() const {
        if (spec_file.empty()) return {{"load_relative_std", load_std}};
        return detail::parse_json(detail::read_file(spec_file));
    }
    UncertaintySpec build(const NetworkCase& c) const { return make_spec(c, record()); }
};

NetworkCase read_case(const std::string& path, const std::string& model) {
    ParseOptions opt;
    if (model == "pi") opt.model = BranchModel::Pi;
    else if (model != "series") throw InvalidArgument("--branch-model must be 'series' or 'pi'");
    return load_case(path, opt);
}

std::vector<Mode> parse_modes(const std::string& list) {
    std::vector<Mode> out;
    std::stringstream ss(list);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(parse_mode(item));
    if (out.empty()) throw InvalidArgument("--modes is empty");
    return out;
}

TrainConfig read_config(const std::string& path) {
    if (path.empty()) return {};
    return TrainConfig::from_json(detail::parse_json(detail::read_file(path)));
}

std::span<const Eigen::Index> pick_split(const Dataset& d, const std::string& name) {
    if (name == "train") return d.train;
    if (name == "validation") return d.validation;
    if (name == "test") return d.test;
    throw InvalidArgument("--split must be train, validation or test");
}

void emit(const json& j, const std::string& path) {
    const std::string text = j.dump(2) + "\n";
    if (path.empty()) std::cout << text;
    else detail::write_file(path, text);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Physics-guided neural networks for probabilistic power flow"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string json_out;
    bool verbose = false;
    app.add_option("--json", json_out, "write the JSON summary here instead of stdout");
    app.add_flag("-v,--verbose", verbose, "print progress to stderr");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "sample injections, solve them and save a dataset");
    std::string g_case, g_out, g_csv, g_branch = "series";
    SpecArgs g_spec;
    Eigen::Index g_n = 22000;
    std::uint64_t g_seed = 1;
    std::vector<double> g_split{10000, 2000, 10000};
    unsigned g_workers = 0;
    gen->add_option("--case", g_case, "network case JSON")->required();
    g_spec.add(gen);
    gen->add_option("-n,--n,--samples", g_n, "number of samples to draw");
    gen->add_option("--seed", g_seed);
    gen->add_option("--split", g_split, "train validation test weights")->expected(3);
    gen->add_option("--workers", g_workers, "solver threads (0 = all cores)");
    gen->add_option("--branch-model", g_branch, "series or pi");
    gen->add_option("--out", g_out, "dataset file")->required();
    gen->add_option("--csv", g_csv, "also export CSV files to this directory");

    // train
    auto* tr = app.add_subcommand("train", "train a model on a dataset");
    std::string t_data, t_config, t_out, t_history, t_mode;
    int t_epochs = -1;
    long long t_seed = -1;
    tr->add_option("--data", t_data)->required();
    tr->add_option("--config", t_config, "training config JSON");
    tr->add_option("--mode", t_mode, "M0..M6 (overrides the config)");
    tr->add_option("--epochs", t_epochs, "max epochs (overrides the config)");
    tr->add_option("--seed", t_seed, "seed (overrides the config)");
    tr->add_option("--out", t_out, "model file")->required();
    tr->add_option("--history", t_history, "per-epoch history CSV");

    // eval
    auto* ev = app.add_subcommand("eval", "accuracy indexes of a model on a dataset split");
    std::string e_model, e_data, e_split = "test";
    ev->add_option("--model", e_model)->required();
    ev->add_option("--data", e_data)->required();
    ev->add_option("--split", e_split, "train, validation or test");
    ev->add_option("--out", json_out, "JSON output file");

    // ppf
    auto* pf = app.add_subcommand("ppf", "Monte Carlo probabilistic power flow");
    std::string p_case, p_engine = "dnn", p_model, p_precision = "f32", p_report, p_branch = "series";
    SpecArgs p_spec;
    Eigen::Index p_n = 10000;
    std::uint64_t p_seed = 1;
    unsigned p_workers = 1;
    int p_bins = 0;
    pf->add_option("--case", p_case)->required();
    p_spec.add(pf);
    pf->add_option("--engine", p_engine, "dnn or nr")->check(CLI::IsMember({"dnn", "nr"}));
    pf->add_option("--model", p_model, "model file (dnn engine)");
    pf->add_option("--precision", p_precision, "f32 or f64 inference")->check(CLI::IsMember({"f32", "f64"}));
    pf->add_option("-n,--n,--samples", p_n);
    pf->add_option("--seed", p_seed);
    pf->add_option("--workers", p_workers, "solver threads (nr engine, 0 = all cores)");
    pf->add_option("--bins", p_bins, "histogram bins (0 = Freedman-Diaconis)");
    pf->add_option("--branch-model", p_branch, "series or pi");
    pf->add_option("--out", json_out, "JSON output file");
    pf->add_option("--report", p_report, "export report files to this directory");

    // compare
    auto* cmp = app.add_subcommand("compare", "train several modes and compare test accuracy");
    std::string c_data, c_config, c_modes = "M1,M4,M5,M6", c_protocol = "stop-on-accuracy", c_csv;
    int c_epochs = -1;
    cmp->add_option("--data", c_data)->required();
    cmp->add_option("--config", c_config, "base training config JSON");
    cmp->add_option("--modes", c_modes, "comma-separated modes");
    cmp->add_option("--protocol", c_protocol, "fixed-epochs or stop-on-accuracy");
    cmp->add_option("--epochs", c_epochs, "max epochs (overrides the config)");
    cmp->add_option("--csv", c_csv, "comparison table CSV");
    cmp->add_option("--out", json_out, "JSON output file");

    // bench
    auto* bn = app.add_subcommand("bench", "time the solver loop against batched inference");
    std::string b_case, b_model, b_branch = "series";
    SpecArgs b_spec;
    Eigen::Index b_n = 10000;
    std::uint64_t b_seed = 1;
    int b_repeats = 5;
    bn->add_option("--case", b_case)->required();
    bn->add_option("--model", b_model)->required();
    b_spec.add(bn);
    bn->add_option("-n,--n,--samples", b_n);
    bn->add_option("--seed", b_seed);
    bn->add_option("--repeats", b_repeats, "model timing repeats (median)");
    bn->add_option("--branch-model", b_branch, "series or pi");
    bn->add_option("--out", json_out, "JSON output file");

    CLI11_PARSE(app, argc, argv);

    set_log_sink([verbose](LogLevel level, std::string_view msg) {
        if (verbose || level == LogLevel::Warning) std::cerr << msg << "\n";
    });

    try {
        json out;
        if (*gen) {
            const NetworkCase c = read_case(g_case, g_branch);
            BuildOptions opt;
            opt.workers = g_workers;
            const Dataset d = build_dataset(c, g_spec.build(c), g_n, g_seed, {g_split[0], g_split[1], g_split[2]},
                                            opt, g_spec.record());
            save_dataset(d, g_out);
            if (!g_csv.empty()) export_dataset_csv(d, g_csv);
            out = {{"dataset", g_out},  {"case", c.name},         {"seed", g_seed},
                   {"requested", g_n},  {"discarded", d.n_discarded}, {"train", d.train.size()},
                   {"validation", d.validation.size()}, {"test", d.test.size()}};
        } else if (*tr) {
            const Dataset d = load_dataset(t_data);
            TrainConfig cfg = read_config(t_config);
            if (!t_mode.empty()) cfg.mode = parse_mode(t_mode);
            if (t_epochs >= 0) cfg.max_epochs = t_epochs;
            if (t_seed >= 0) cfg.seed = static_cast<std::uint64_t>(t_seed);
            const TrainResult r = train(cfg, d);
            save_model(r.model, t_out);
            if (!t_history.empty()) detail::write_file(t_history, r.history.to_csv());
            out = {{"model", t_out},
                   {"config", cfg.to_json()},
                   {"epochs", r.history.epochs.size()},
                   {"best_epoch", r.history.best_epoch},
                   {"stop_reason", r.history.stop_reason},
                   {"validation", [&] {
                        MetricsReport m = evaluate_indexes(r.model, d, d.validation, cfg.thresholds);
                        m.n_epoch = static_cast<int>(r.history.epochs.size());
                        return m.to_json();
                    }()}};
        } else if (*ev) {
            const DnnModel m = load_model(e_model);
            const Dataset d = load_dataset(e_data);
            out = {{"split", e_split}, {"metrics", evaluate_indexes(m, d, pick_split(d, e_split)).to_json()}};
        } else if (*pf) {
            const NetworkCase c = read_case(p_case, p_branch);
            PpfOptions opt;
            opt.workers = p_workers;
            opt.bins = p_bins;
            opt.precision = p_precision == "f64" ? Precision::Double : Precision::Single;
            std::optional<DnnModel> model;
            if (p_engine == "dnn") {
                if (p_model.empty()) throw InvalidArgument("--engine dnn needs --model");
                model = load_model(p_model);
            }
            const PpfResult r = run_ppf(model ? &*model : nullptr, c, p_spec.build(c), p_n, p_seed, opt);
            PpfReport rep;
            rep.meta = {{"engine", r.engine},
                        {"case", c.name},
                        {"base_mva", c.base_mva},
                        {"seed", p_seed},
                        {"requested", r.n_requested},
                        {"failed", r.n_failed},
                        {"eval_seconds", r.timing.eval_seconds},
                        {"per_sample_seconds", r.timing.per_sample_seconds}};
            rep.stats = r.stats;
            if (!p_report.empty()) export_report(rep, p_report);
            out = report_to_json(rep);
        } else if (*cmp) {
            const Dataset d = load_dataset(c_data);
            TrainConfig cfg = read_config(c_config);
            if (c_epochs >= 0) cfg.max_epochs = c_epochs;
            const ComparisonTable t = compare_methods(parse_modes(c_modes), cfg, d, parse_protocol(c_protocol));
            if (!c_csv.empty()) detail::write_file(c_csv, t.to_csv());
            out = t.to_json();
        } else if (*bn) {
            const NetworkCase c = read_case(b_case, b_branch);
            const DnnModel m = load_model(b_model);
            const Eigen::MatrixXd x = draw_samples(b_spec.build(c), b_n, b_seed);
            out = bench_ppf(m, c, x, b_repeats).to_json();
        }
        emit(out, json_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
