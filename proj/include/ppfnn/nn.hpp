#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ppfnn/error.hpp"
#include "ppfnn/io.hpp"
#include "ppfnn/random.hpp"
#include "ppfnn/sampling.hpp"

namespace ppfnn {

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
/// Indicator of z > 0; the derivative at exactly 0 is taken as 0.
inline double relu_derivative(double z) { return z > 0.0 ? 1.0 : 0.0; }

enum class Activation { Relu, Linear };
enum class InitScheme { Balanced, He };

inline std::string_view to_string(Activation a) { return a == Activation::Relu ? "relu" : "linear"; }
inline std::string_view to_string(InitScheme s) { return s == InitScheme::Balanced ? "balanced" : "he"; }

struct ModelInfo {
    std::string case_name;
    std::uint64_t seed = 0;
    std::string mode;
    std::string init;

    bool operator==(const ModelInfo&) const = default;
};

/// Fully connected network. Hidden layers use ReLU; the output layer is linear
/// or ReLU. Layer i maps layer_sizes[i] inputs to layer_sizes[i+1] outputs.
struct DnnModel {
    std::vector<int> layer_sizes;
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    Activation output_activation = Activation::Linear;
    Normalizer input_norm;
    Normalizer output_norm;
    ModelInfo info;

    int n_layers() const { return static_cast<int>(weights.size()); }
    int input_size() const { return layer_sizes.front(); }
    int output_size() const { return layer_sizes.back(); }
    Activation activation(int layer) const {
        return layer + 1 == n_layers() ? output_activation : Activation::Relu;
    }

    void validate() const {
        if (layer_sizes.size() < 2) throw ShapeError("a model needs at least two layer sizes");
        if (weights.size() + 1 != layer_sizes.size() || biases.size() != weights.size())
            throw ShapeError("parameter count does not match layer sizes");
        for (int i = 0; i < n_layers(); ++i) {
            if (weights[i].rows() != layer_sizes[i + 1] || weights[i].cols() != layer_sizes[i] ||
                biases[i].size() != layer_sizes[i + 1])
                throw ShapeError("layer " + std::to_string(i) + " parameters do not chain");
            if (!weights[i].allFinite() || !biases[i].allFinite())
                throw Error("layer " + std::to_string(i) + " has non-finite parameters");
        }
        if (input_norm.size() != 0 && input_norm.size() != input_size())
            throw ShapeError("input normalizer width does not match the model");
        if (output_norm.size() != 0 && output_norm.size() != output_size())
            throw ShapeError("output normalizer width does not match the model");
    }

    bool operator==(const DnnModel&) const = default;
};

/// Model with the given shape and all parameters zero.
inline DnnModel make_model(std::vector<int> layer_sizes, Activation output = Activation::Linear) {
    if (layer_sizes.size() < 2) throw InvalidArgument("a model needs at least two layer sizes");
    for (int n : layer_sizes)
        if (n <= 0) throw InvalidArgument("layer sizes must be positive");
    DnnModel m;
    m.layer_sizes = std::move(layer_sizes);
    m.output_activation = output;
    for (std::size_t i = 0; i + 1 < m.layer_sizes.size(); ++i) {
        m.weights.emplace_back(Eigen::MatrixXd::Zero(m.layer_sizes[i + 1], m.layer_sizes[i]));
        m.biases.emplace_back(Eigen::VectorXd::Zero(m.layer_sizes[i + 1]));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Initialization

/// Balanced forward/backward rule. The first and last layers carry the extra
/// 1/n terms of a linear input and a linear output respectively.
inline double balanced_init_std(const std::vector<int>& sizes, int layer) {
    const int last = static_cast<int>(sizes.size()) - 2;
    const double ni = sizes[layer], no = sizes[layer + 1];
    if (layer == 0) return std::sqrt((2 * ni + no) / (ni * no));
    if (layer == last) return std::sqrt((ni + 2 * no) / (ni * no));
    return std::sqrt((ni + no) / (ni * no));
}

/// Fan-in rule Var = 2 / n_in.
inline double he_init_std(const std::vector<int>& sizes, int layer) { return std::sqrt(2.0 / sizes[layer]); }

/// Draws zero-mean Gaussian weights (stream {layer, 0, 'INIT'}) and zero biases.
inline void initialize(DnnModel& m, InitScheme scheme, std::uint64_t seed) {
    for (int i = 0; i < m.n_layers(); ++i) {
        const double sd = scheme == InitScheme::Balanced ? balanced_init_std(m.layer_sizes, i) : he_init_std(m.layer_sizes, i);
        Philox4x32 rng(seed, static_cast<std::uint32_t>(i), 0, Philox4x32::kInit);
        std::normal_distribution<double> nd(0.0, sd);
        for (Eigen::Index k = 0; k < m.weights[i].size(); ++k) m.weights[i].data()[k] = nd(rng);
        m.biases[i].setZero();
    }
    m.info.seed = seed;
    m.info.init = std::string(to_string(scheme));
}

inline void init_balanced(DnnModel& m, std::uint64_t seed) { initialize(m, InitScheme::Balanced, seed); }
inline void init_he(DnnModel& m, std::uint64_t seed) { initialize(m, InitScheme::He, seed); }

// ---------------------------------------------------------------------------
// Forward evaluation

/// z[i] = W_i y[i] + b_i and y[i+1] = act(z[i]); y[0] is the input.
struct ForwardTrace {
    std::vector<Eigen::MatrixXd> z;
    std::vector<Eigen::MatrixXd> y;

    const Eigen::MatrixXd& output() const { return y.back(); }
};

namespace detail {

/// out = W * in + b, accumulated over k in a fixed order for every column so
/// that a sample's result does not depend on the batch it is evaluated in.
inline void affine_fixed_order(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, const Eigen::MatrixXd& in,
                               Eigen::MatrixXd& out) {
    constexpr Eigen::Index kBlock = 4;
    const Eigen::Index rows = w.rows(), inner = w.cols(), n = in.cols();
    out.resize(rows, n);
    Eigen::Matrix<double, Eigen::Dynamic, kBlock> acc(rows, kBlock);
    Eigen::Matrix<double, Eigen::Dynamic, kBlock> src(inner, kBlock);
    for (Eigen::Index s0 = 0; s0 < n; s0 += kBlock) {
        const Eigen::Index cols = std::min(kBlock, n - s0);
        src.setZero();
        src.leftCols(cols) = in.middleCols(s0, cols);
        acc.colwise() = b;
        for (Eigen::Index k = 0; k < inner; ++k) {
            const auto wk = w.col(k);
            acc.col(0).noalias() += wk * src(k, 0);
            acc.col(1).noalias() += wk * src(k, 1);
            acc.col(2).noalias() += wk * src(k, 2);
            acc.col(3).noalias() += wk * src(k, 3);
        }
        out.middleCols(s0, cols) = acc.leftCols(cols);
    }
}

inline void activate(Activation a, Eigen::MatrixXd& m) {
    if (a == Activation::Relu) m = m.cwiseMax(0.0);
}

inline void check_input(const DnnModel& model, Eigen::Index rows) {
    if (rows != model.input_size())
        throw ShapeError("input has " + std::to_string(rows) + " rows, model expects " +
                         std::to_string(model.input_size()));
}

} // namespace detail

/// Evaluates a normalized batch and keeps every intermediate for backprop.
/// Each column is computed independently in a fixed order, so batched and
/// per-column results are bit-identical.
inline Eigen::MatrixXd forward(const DnnModel& model, const Eigen::MatrixXd& x, ForwardTrace* trace = nullptr) {
    detail::check_input(model, x.rows());
    ForwardTrace local;
    ForwardTrace& t = trace ? *trace : local;
    t.z.resize(model.n_layers());
    t.y.resize(model.n_layers() + 1);
    t.y[0] = x;
    for (int i = 0; i < model.n_layers(); ++i) {
        detail::affine_fixed_order(model.weights[i], model.biases[i], t.y[i], t.z[i]);
        t.y[i + 1] = t.z[i];
        detail::activate(model.activation(i), t.y[i + 1]);
    }
    return t.y.back();
}

/// Batched inference engine with a fixed scalar type. Columns are processed in
/// cache-sized chunks through dense matrix products; results agree with
/// forward() to rounding but are not bit-identical to it.
template <typename Scalar>
class Predictor {
public:
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    explicit Predictor(const DnnModel& model, Eigen::Index chunk = 512) : chunk_(chunk) {
        model.validate();
        sizes_ = model.layer_sizes;
        output_activation_ = model.output_activation;
        for (int i = 0; i < model.n_layers(); ++i) {
            w_.push_back(model.weights[i].cast<Scalar>());
            b_.push_back(model.biases[i].cast<Scalar>());
        }
        const int widest = *std::max_element(sizes_.begin(), sizes_.end());
        buf_[0].resize(widest, chunk_);
        buf_[1].resize(widest, chunk_);
        has_norm_ = model.input_norm.size() != 0 && model.output_norm.size() != 0;
        if (has_norm_) {
            in_mean_ = model.input_norm.mean;
            in_scale_ = model.input_norm.scale().cwiseInverse();
            out_mean_ = model.output_norm.mean;
            out_scale_ = model.output_norm.scale();
        }
    }

    /// Normalized inputs to normalized outputs.
    Eigen::MatrixXd predict_normalized(const Eigen::MatrixXd& x) {
        return run(x, false);
    }

    /// Physical inputs to physical outputs using the model's normalizers.
    Eigen::MatrixXd predict(const Eigen::MatrixXd& x) {
        if (!has_norm_) throw Error("model has no attached normalizers");
        return run(x, true);
    }

private:
    Eigen::MatrixXd run(const Eigen::MatrixXd& x, bool physical) {
        if (x.rows() != sizes_.front())
            throw ShapeError("input has " + std::to_string(x.rows()) + " rows, model expects " +
                             std::to_string(sizes_.front()));
        const int n_layers = static_cast<int>(w_.size());
        Eigen::MatrixXd out(sizes_.back(), x.cols());
        for (Eigen::Index s0 = 0; s0 < x.cols(); s0 += chunk_) {
            const Eigen::Index cols = std::min(chunk_, x.cols() - s0);
            auto in = buf_[0].topLeftCorner(sizes_.front(), cols);
            if (physical)
                in = ((x.middleCols(s0, cols).colwise() - in_mean_).array().colwise() * in_scale_.array())
                         .template cast<Scalar>();
            else
                in = x.middleCols(s0, cols).template cast<Scalar>();
            int cur = 0;
            for (int i = 0; i < n_layers; ++i) {
                auto src = buf_[cur].topLeftCorner(sizes_[i], cols);
                auto dst = buf_[1 - cur].topLeftCorner(sizes_[i + 1], cols);
                dst.noalias() = w_[i] * src;
                if (i + 1 < n_layers || output_activation_ == Activation::Relu)
                    dst = (dst.colwise() + b_[i]).cwiseMax(Scalar(0));
                else
                    dst.colwise() += b_[i];
                cur = 1 - cur;
            }
            const auto res = buf_[cur].topLeftCorner(sizes_.back(), cols).template cast<double>();
            if (physical)
                out.middleCols(s0, cols) = (res.array().colwise() * out_scale_.array()).matrix().colwise() + out_mean_;
            else
                out.middleCols(s0, cols) = res;
        }
        return out;
    }

    Eigen::Index chunk_;
    std::vector<int> sizes_;
    Activation output_activation_ = Activation::Linear;
    std::vector<Matrix> w_;
    std::vector<Vector> b_;
    Matrix buf_[2];
    bool has_norm_ = false;
    Eigen::VectorXd in_mean_, in_scale_, out_mean_, out_scale_;
};

/// Normalized-space inference in double precision without a trace.
inline Eigen::MatrixXd predict(const DnnModel& model, const Eigen::MatrixXd& x) {
    detail::check_input(model, x.rows());
    return Predictor<double>(model).predict_normalized(x);
}

// ---------------------------------------------------------------------------
// Model files

inline constexpr std::string_view kModelMagic = "PPFMDL01";

inline void save_model(const DnnModel& m, const std::filesystem::path& path) {
    m.validate();
    nlohmann::json h;
    h["format_version"] = 1;
    h["layer_sizes"] = m.layer_sizes;
    h["activations"] = {{"hidden", "relu"}, {"output", std::string(to_string(m.output_activation))}};
    h["info"] = {{"case", m.info.case_name}, {"seed", m.info.seed}, {"mode", m.info.mode}, {"init", m.info.init}};
    if (m.input_norm.size() != 0) h["input_normalizer"] = m.input_norm.to_json();
    if (m.output_norm.size() != 0) h["output_normalizer"] = m.output_norm.to_json();
    std::vector<Eigen::MatrixXd> bias_cols;
    for (const auto& b : m.biases) bias_cols.emplace_back(b);
    std::vector<NamedMatrix> blocks;
    for (int i = 0; i < m.n_layers(); ++i) {
        blocks.emplace_back("w" + std::to_string(i), &m.weights[i]);
        blocks.emplace_back("b" + std::to_string(i), &bias_cols[i]);
    }
    write_container(path, kModelMagic, std::move(h), blocks);
}

inline DnnModel load_model(const std::filesystem::path& path) {
    Container c = read_container(path, kModelMagic);
    const auto& h = c.header;
    if (h.at("format_version").get<int>() != 1) throw IoError("unsupported model version", path.string());
    const auto out = h.at("activations").at("output").get<std::string>();
    if (out != "relu" && out != "linear") throw IoError("unknown output activation '" + out + "'", path.string());
    DnnModel m = make_model(h.at("layer_sizes").get<std::vector<int>>(),
                            out == "relu" ? Activation::Relu : Activation::Linear);
    const auto& info = h.at("info");
    m.info = {info.at("case").get<std::string>(), info.at("seed").get<std::uint64_t>(),
              info.at("mode").get<std::string>(), info.at("init").get<std::string>()};
    if (h.contains("input_normalizer")) m.input_norm = Normalizer::from_json(h.at("input_normalizer"));
    if (h.contains("output_normalizer")) m.output_norm = Normalizer::from_json(h.at("output_normalizer"));
    for (int i = 0; i < m.n_layers(); ++i) {
        const auto& w = c.block("w" + std::to_string(i));
        const auto& b = c.block("b" + std::to_string(i));
        if (w.rows() != m.weights[i].rows() || w.cols() != m.weights[i].cols() || b.rows() != m.biases[i].size() ||
            b.cols() != 1)
            throw IoError("layer " + std::to_string(i) + " block shape mismatch", path.string());
        m.weights[i] = w;
        m.biases[i] = b.col(0);
    }
    m.validate();
    return m;
}

} // namespace ppfnn
