#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "claimcast/errors.hpp"
#include "claimcast/features.hpp"
#include "claimcast/rng.hpp"

namespace claimcast {

enum class Architecture { mlp, logistic };

inline const char* to_string(Architecture a) { return a == Architecture::mlp ? "mlp" : "logistic"; }

inline Architecture architecture_from_string(const std::string& s) {
    if (s == "mlp") return Architecture::mlp;
    if (s == "logistic") return Architecture::logistic;
    throw ConfigError("unknown architecture \"" + s + "\" (expected mlp or logistic)");
}

struct ModelConfig {
    Architecture architecture = Architecture::mlp;
    std::vector<std::int32_t> hidden_layers = {64, 32};  // ignored for logistic
    double dropout = 0.2;                                // hidden-activation drop rate
    double learning_rate = 0.05;
    std::int32_t epochs = 40;
    std::int32_t batch_size = 128;
    double l2 = 0.0;
    double momentum = 0.0;
    std::uint64_t seed = 0;
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Binary cross-entropy from the logit, stable for large |z|.
inline double bce_from_logit(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

// Fully-connected net with ReLU hiddens and a single sigmoid output.
// A logistic regression is the zero-hidden-layer case. Weights are
// row-major (out x in).
class Network {
public:
    struct Layer {
        std::size_t in = 0, out = 0;
        std::vector<double> w;  // out*in, row-major
        std::vector<double> b;  // out
    };

    Network() = default;

    // Uniform fan-in-scaled weight init, zero biases.
    static Network initialized(std::size_t input_width, std::span<const std::int32_t> hidden, std::uint64_t seed) {
        Network net = shaped(input_width, hidden);
        std::mt19937_64 rng(seed);
        for (auto& layer : net.layers_) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& w : layer.w) w = dist(rng);
        }
        return net;
    }

    static Network zeros(std::size_t input_width, std::span<const std::int32_t> hidden) {
        return shaped(input_width, hidden);
    }

    std::size_t input_width() const { return layers_.empty() ? 0 : layers_.front().in; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.w.size() + l.b.size();
        return n;
    }

    double& parameter(std::size_t i) {
        for (auto& l : layers_) {
            if (i < l.w.size()) return l.w[i];
            i -= l.w.size();
            if (i < l.b.size()) return l.b[i];
            i -= l.b.size();
        }
        throw std::out_of_range("parameter index");
    }

    double logit(std::span<const double> x) const {
        std::vector<double> act(x.begin(), x.end()), next;
        for (std::size_t k = 0; k + 1 < layers_.size(); ++k) {
            affine(layers_[k], act, next);
            for (auto& v : next) v = std::max(v, 0.0);
            act.swap(next);
        }
        affine(layers_.back(), act, next);
        return next[0];
    }

    double forward(std::span<const double> x) const { return sigmoid(logit(x)); }

    // Mean BCE over the rows plus (l2/2)*sum(w^2), with the gradient
    // accumulated into `grads` (same shapes, zeroed here). When
    // dropout_p > 0 and drop_rng is given, hidden activations are
    // dropped per sample with inverted scaling, as during training.
    double loss_and_gradient(const LabeledMatrix& m, std::span<const std::size_t> rows, double l2,
                             std::vector<Layer>& grads, double dropout_p = 0.0,
                             std::mt19937_64* drop_rng = nullptr) const {
        for (auto& g : grads) {
            std::fill(g.w.begin(), g.w.end(), 0.0);
            std::fill(g.b.begin(), g.b.end(), 0.0);
        }
        const std::size_t depth = layers_.size();
        const double inv_n = 1.0 / static_cast<double>(rows.size());
        const double keep = 1.0 - dropout_p;
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        // per-layer input activations and post-ReLU masks for backprop
        std::vector<std::vector<double>> inputs(depth), masks(depth);
        std::vector<double> next, delta, delta_prev;

        double loss = 0.0;
        for (const std::size_t ri : rows) {
            const auto& row = m.rows[ri];
            inputs[0].assign(row.features.begin(), row.features.end());
            for (std::size_t k = 0; k + 1 < depth; ++k) {
                affine(layers_[k], inputs[k], next);
                auto& mask = masks[k];
                mask.assign(next.size(), 1.0);
                for (std::size_t j = 0; j < next.size(); ++j) {
                    if (next[j] <= 0.0) {
                        mask[j] = 0.0;
                        next[j] = 0.0;
                    }
                }
                // one draw per unit regardless of activation, so the
                // dropout stream does not depend on current weights
                if (drop_rng && dropout_p > 0.0) {
                    for (std::size_t j = 0; j < next.size(); ++j) {
                        if (unit(*drop_rng) < dropout_p) {
                            mask[j] = 0.0;
                            next[j] = 0.0;
                        } else {
                            mask[j] /= keep;
                            next[j] /= keep;
                        }
                    }
                }
                inputs[k + 1] = next;
            }
            affine(layers_.back(), inputs[depth - 1], next);
            const double z = next[0];
            const double y = static_cast<double>(row.label);
            loss += bce_from_logit(z, y) * inv_n;

            // output delta, then walk the layers back
            delta.assign(1, (sigmoid(z) - y) * inv_n);
            for (std::size_t k = depth; k-- > 0;) {
                const Layer& l = layers_[k];
                Layer& g = grads[k];
                const auto& h = inputs[k];
                for (std::size_t o = 0; o < l.out; ++o) {
                    const double d = delta[o];
                    if (d == 0.0) continue;
                    g.b[o] += d;
                    double* gw = g.w.data() + o * l.in;
                    for (std::size_t i = 0; i < l.in; ++i) gw[i] += d * h[i];
                }
                if (k == 0) break;
                delta_prev.assign(l.in, 0.0);
                for (std::size_t o = 0; o < l.out; ++o) {
                    const double d = delta[o];
                    if (d == 0.0) continue;
                    const double* lw = l.w.data() + o * l.in;
                    for (std::size_t i = 0; i < l.in; ++i) delta_prev[i] += d * lw[i];
                }
                const auto& mask = masks[k - 1];
                for (std::size_t i = 0; i < delta_prev.size(); ++i) delta_prev[i] *= mask[i];
                delta.swap(delta_prev);
            }
        }

        if (l2 > 0.0) {
            for (std::size_t k = 0; k < depth; ++k) {
                const auto& w = layers_[k].w;
                auto& gw = grads[k].w;
                for (std::size_t i = 0; i < w.size(); ++i) {
                    loss += 0.5 * l2 * w[i] * w[i];
                    gw[i] += l2 * w[i];
                }
            }
        }
        return loss;
    }

    std::vector<Layer> make_gradients() const {
        std::vector<Layer> g;
        for (const auto& l : layers_) g.push_back({l.in, l.out, std::vector<double>(l.w.size(), 0.0),
                                                   std::vector<double>(l.b.size(), 0.0)});
        return g;
    }

    friend bool operator==(const Network& a, const Network& b) {
        if (a.layers_.size() != b.layers_.size()) return false;
        for (std::size_t i = 0; i < a.layers_.size(); ++i)
            if (a.layers_[i].in != b.layers_[i].in || a.layers_[i].out != b.layers_[i].out ||
                a.layers_[i].w != b.layers_[i].w || a.layers_[i].b != b.layers_[i].b)
                return false;
        return true;
    }

private:
    static Network shaped(std::size_t input_width, std::span<const std::int32_t> hidden) {
        if (input_width == 0) throw TrainError("input width must be positive");
        Network net;
        std::size_t in = input_width;
        for (auto h : hidden) {
            if (h < 1) throw ConfigError("hidden layer widths must be >= 1");
            net.layers_.push_back({in, static_cast<std::size_t>(h), std::vector<double>(in * h, 0.0),
                                   std::vector<double>(static_cast<std::size_t>(h), 0.0)});
            in = static_cast<std::size_t>(h);
        }
        net.layers_.push_back({in, 1, std::vector<double>(in, 0.0), std::vector<double>(1, 0.0)});
        return net;
    }

    static void affine(const Layer& l, const std::vector<double>& x, std::vector<double>& out) {
        out.assign(l.out, 0.0);
        for (std::size_t o = 0; o < l.out; ++o) {
            const double* w = l.w.data() + o * l.in;
            double acc = l.b[o];
            for (std::size_t i = 0; i < l.in; ++i) acc += w[i] * x[i];
            out[o] = acc;
        }
    }

    std::vector<Layer> layers_;
};

struct TrainedModel {
    Architecture architecture = Architecture::mlp;
    Network net;
    NormalizationStats norm;  // identity stats when training was unnormalized
    std::vector<std::string> feature_names;
    ModelConfig config;
    std::vector<double> epoch_losses;
    double final_loss = 0.0;

    // Features must be in training space (standardized when the
    // training matrix was).
    double predict(std::span<const double> features) const {
        if (features.size() != net.input_width())
            throw DataError("feature vector length " + std::to_string(features.size()) +
                            " does not match model input width " + std::to_string(net.input_width()));
        for (double v : features)
            if (!std::isfinite(v)) throw DataError("non-finite feature value in predict input");
        return net.forward(features);
    }

    // Raw (unstandardized) features; applies the stored normalization.
    double predict_raw(std::span<const double> features) const {
        if (features.size() != net.input_width())
            throw DataError("feature vector length " + std::to_string(features.size()) +
                            " does not match model input width " + std::to_string(net.input_width()));
        std::vector<double> x(features.begin(), features.end());
        norm.apply(x);
        return predict(x);
    }

    std::vector<double> predict_many(const LabeledMatrix& m) const {
        std::vector<double> out;
        out.reserve(m.rows.size());
        for (const auto& r : m.rows) out.push_back(predict(r.features));
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format_version"] = 1;
        j["architecture"] = to_string(architecture);
        j["input_width"] = net.input_width();
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& l : net.layers()) {
            nlohmann::json lj;
            lj["in"] = l.in;
            lj["out"] = l.out;
            lj["weights"] = l.w;  // row-major, out x in
            lj["bias"] = l.b;
            layers.push_back(std::move(lj));
        }
        j["layers"] = std::move(layers);
        j["normalization"] = {{"mean", norm.mean}, {"stdev", norm.stdev}};
        j["feature_names"] = feature_names;
        j["config"] = {{"architecture", to_string(config.architecture)},
                       {"hidden_layers", config.hidden_layers},
                       {"dropout", config.dropout},
                       {"learning_rate", config.learning_rate},
                       {"epochs", config.epochs},
                       {"batch_size", config.batch_size},
                       {"l2", config.l2},
                       {"momentum", config.momentum},
                       {"seed", config.seed}};
        j["epoch_losses"] = epoch_losses;
        j["final_loss"] = final_loss;
        return j;
    }

    static TrainedModel from_json(const nlohmann::json& j) {
        if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
            throw DataError("unsupported model format_version");
        TrainedModel m;
        m.architecture = architecture_from_string(j.at("architecture").get<std::string>());
        const auto input_width = j.at("input_width").get<std::size_t>();
        std::vector<Network::Layer> layers;
        for (const auto& lj : j.at("layers")) {
            Network::Layer l;
            l.in = lj.at("in").get<std::size_t>();
            l.out = lj.at("out").get<std::size_t>();
            l.w = lj.at("weights").get<std::vector<double>>();
            l.b = lj.at("bias").get<std::vector<double>>();
            if (l.w.size() != l.in * l.out || l.b.size() != l.out)
                throw DataError("model layer has inconsistent weight shapes");
            layers.push_back(std::move(l));
        }
        if (layers.empty()) throw DataError("model has no layers");
        std::size_t in = input_width;
        for (const auto& l : layers) {
            if (l.in != in) throw DataError("model layer shapes do not chain from the input width");
            in = l.out;
        }
        if (layers.back().out != 1) throw DataError("model output layer must have a single unit");
        std::vector<std::int32_t> hidden;
        for (std::size_t k = 0; k + 1 < layers.size(); ++k) hidden.push_back(static_cast<std::int32_t>(layers[k].out));
        m.net = Network::zeros(input_width, hidden);
        m.net.layers() = std::move(layers);
        m.norm.mean = j.at("normalization").at("mean").get<std::vector<double>>();
        m.norm.stdev = j.at("normalization").at("stdev").get<std::vector<double>>();
        if (m.norm.mean.size() != input_width || m.norm.stdev.size() != input_width)
            throw DataError("normalization statistics length does not match the input width");
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        const auto& cj = j.at("config");
        m.config.architecture = architecture_from_string(cj.at("architecture").get<std::string>());
        m.config.hidden_layers = cj.at("hidden_layers").get<std::vector<std::int32_t>>();
        m.config.dropout = cj.at("dropout").get<double>();
        m.config.learning_rate = cj.at("learning_rate").get<double>();
        m.config.epochs = cj.at("epochs").get<std::int32_t>();
        m.config.batch_size = cj.at("batch_size").get<std::int32_t>();
        m.config.l2 = cj.at("l2").get<double>();
        m.config.momentum = cj.at("momentum").get<double>();
        m.config.seed = cj.at("seed").get<std::uint64_t>();
        m.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
        m.final_loss = j.at("final_loss").get<double>();
        return m;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out << to_json().dump(2) << "\n";
        if (!out) throw IoError("write failed for " + path.string());
    }

    static TrainedModel load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open " + path.string());
        nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded()) throw DataError("malformed model file " + path.string());
        return from_json(j);
    }
};

namespace detail {

inline void validate_model_config(const ModelConfig& cfg) {
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (cfg.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.l2 < 0.0) throw ConfigError("l2 must be >= 0");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
    for (auto h : cfg.hidden_layers)
        if (h < 1) throw ConfigError("hidden layer widths must be >= 1");
}

inline std::span<const std::int32_t> effective_hidden(const ModelConfig& cfg) {
    if (cfg.architecture == Architecture::logistic) return {};
    return cfg.hidden_layers;
}

}  // namespace detail

// Mini-batch SGD on mean BCE + L2, deterministic for a fixed seed:
// init, epoch shuffles and dropout all derive from cfg.seed. Dropout
// uses inverted scaling, so inference needs no rescaling.
inline TrainedModel train(const LabeledMatrix& m, const ModelConfig& cfg) {
    detail::validate_model_config(cfg);
    if (m.rows.empty()) throw TrainError("training matrix is empty");
    const std::int64_t pos = m.positive_count();
    if (pos == 0 || pos == static_cast<std::int64_t>(m.rows.size()))
        throw TrainError("training matrix must contain both classes");
    const std::size_t width = m.feature_names.size();
    for (const auto& r : m.rows)
        if (r.features.size() != width) throw TrainError("ragged feature rows in training matrix");

    TrainedModel model;
    model.architecture = cfg.architecture;
    model.config = cfg;
    model.feature_names = m.feature_names;
    if (m.norm) {
        model.norm = *m.norm;
    } else {
        model.norm.mean.assign(width, 0.0);
        model.norm.stdev.assign(width, 1.0);
    }

    Network net = Network::initialized(width, detail::effective_hidden(cfg), derive_seed(cfg.seed, 0, stream::training));
    auto shuffle_rng = make_rng(cfg.seed, 1, stream::training);
    auto dropout_rng = make_rng(cfg.seed, 2, stream::training);

    auto grads = net.make_gradients();
    auto velocity = net.make_gradients();
    std::vector<std::size_t> order(m.rows.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

    for (std::int32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t count = std::min(bs, order.size() - start);
            const std::span<const std::size_t> batch(order.data() + start, count);
            const double loss = net.loss_and_gradient(m, batch, cfg.l2, grads, cfg.dropout,
                                                      cfg.dropout > 0.0 ? &dropout_rng : nullptr);
            epoch_loss += loss;
            ++batches;
            for (std::size_t k = 0; k < grads.size(); ++k) {
                auto& layer = net.layers()[k];
                for (std::size_t i = 0; i < layer.w.size(); ++i) {
                    velocity[k].w[i] = cfg.momentum * velocity[k].w[i] - cfg.learning_rate * grads[k].w[i];
                    layer.w[i] += velocity[k].w[i];
                }
                for (std::size_t i = 0; i < layer.b.size(); ++i) {
                    velocity[k].b[i] = cfg.momentum * velocity[k].b[i] - cfg.learning_rate * grads[k].b[i];
                    layer.b[i] += velocity[k].b[i];
                }
            }
        }
        epoch_loss /= static_cast<double>(batches);
        if (!std::isfinite(epoch_loss))
            throw TrainError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
        model.epoch_losses.push_back(epoch_loss);
    }

    model.final_loss = model.epoch_losses.empty() ? 0.0 : model.epoch_losses.back();
    model.net = std::move(net);
    return model;
}

// Analytic full-batch gradients against central finite differences over
// every parameter; dropout is disabled for the check. Returns the max
// relative error, |a - n| / max(|a|, |n|, 1e-4); the floor keeps
// vanishing-gradient parameters from amplifying finite-difference noise.
inline double gradient_check(const ModelConfig& cfg, const LabeledMatrix& m, double epsilon) {
    detail::validate_model_config(cfg);
    if (epsilon < 1e-7 || epsilon > 1e-3) throw ConfigError("epsilon must lie in [1e-7, 1e-3]");
    if (m.rows.empty()) throw TrainError("gradient check needs a non-empty matrix");

    Network net = Network::initialized(m.feature_names.size(), detail::effective_hidden(cfg),
                                       derive_seed(cfg.seed, 0, stream::training));
    std::vector<std::size_t> rows(m.rows.size());
    std::iota(rows.begin(), rows.end(), 0);

    auto grads = net.make_gradients();
    net.loss_and_gradient(m, rows, cfg.l2, grads);
    std::vector<double> analytic;
    for (const auto& g : grads) {
        analytic.insert(analytic.end(), g.w.begin(), g.w.end());
        analytic.insert(analytic.end(), g.b.begin(), g.b.end());
    }

    auto scratch = net.make_gradients();
    double max_rel = 0.0;
    for (std::size_t i = 0; i < net.parameter_count(); ++i) {
        double& p = net.parameter(i);
        const double saved = p;
        p = saved + epsilon;
        const double up = net.loss_and_gradient(m, rows, cfg.l2, scratch);
        p = saved - epsilon;
        const double down = net.loss_and_gradient(m, rows, cfg.l2, scratch);
        p = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-4});
        max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

}  // namespace claimcast
