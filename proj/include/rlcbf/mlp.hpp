#pragma once

// Small dense networks with manual reverse-mode gradients and Adam.
// Batches are column-major: one sample per column.

#include <rlcbf/common.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

namespace rlcbf {

enum class OutputActivation : uint64_t { identity = 0, scaled_tanh = 1 };

struct MlpGrads {
    std::vector<Mat> dW;
    std::vector<Vec> db;
};

struct Mlp {
    std::vector<int> layer_sizes;
    std::vector<Mat> W;  // W[l]: layer_sizes[l+1] x layer_sizes[l]
    std::vector<Vec> b;
    OutputActivation out_act = OutputActivation::identity;
    double out_scale = 1.0;

    // Weights and biases uniform in +-1/sqrt(fan_in), per layer.
    static Mlp init(const std::vector<int>& sizes, OutputActivation act, double scale,
                    std::mt19937_64& rng) {
        if (sizes.size() < 2) throw ConfigError("mlp: need at least input and output layer sizes");
        for (int s : sizes)
            if (s <= 0) throw ConfigError("mlp: layer sizes must be positive");
        if (scale <= 0.0) throw ConfigError("mlp: output scale must be positive");
        Mlp net;
        net.layer_sizes = sizes;
        net.out_act = act;
        net.out_scale = scale;
        for (size_t l = 0; l + 1 < sizes.size(); ++l) {
            double bound = 1.0 / std::sqrt(double(sizes[l]));
            Mat w(sizes[l + 1], sizes[l]);
            Vec bias(sizes[l + 1]);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, -bound, bound);
            for (Eigen::Index i = 0; i < bias.size(); ++i) bias[i] = uniform(rng, -bound, bound);
            net.W.push_back(std::move(w));
            net.b.push_back(std::move(bias));
        }
        return net;
    }

    size_t num_layers() const { return W.size(); }

    size_t param_count() const {
        size_t n = 0;
        for (size_t l = 0; l < W.size(); ++l) n += size_t(W[l].size()) + size_t(b[l].size());
        return n;
    }

    void zero_output_layer() {
        W.back().setZero();
        b.back().setZero();
    }

    struct ForwardCache {
        Mat X;
        std::vector<Mat> pre;   // pre-activation per layer
        std::vector<Mat> post;  // activation output per layer
    };

    Mat forward_cached(const Mat& X, ForwardCache& cache) const {
        if (X.rows() != layer_sizes.front())
            throw ConfigError("mlp: input rows " + std::to_string(X.rows()) + " != expected " +
                              std::to_string(layer_sizes.front()));
        cache.X = X;
        cache.pre.assign(W.size(), Mat());
        cache.post.assign(W.size(), Mat());
        Mat cur = X;
        for (size_t l = 0; l < W.size(); ++l) {
            Mat z = (W[l] * cur).colwise() + b[l];
            cache.pre[l] = z;
            if (l + 1 < W.size()) {
                cur = z.array().tanh();
            } else if (out_act == OutputActivation::identity) {
                cur = z;
            } else {
                cur = out_scale * z.array().tanh();
            }
            cache.post[l] = cur;
        }
        return cur;
    }

    Mat forward(const Mat& X) const {
        ForwardCache scratch;
        return forward_cached(X, scratch);
    }

    // Gradients of sum(upstream .* output) w.r.t. every parameter, summed over
    // the batch; optionally also w.r.t. the input (per column).
    MlpGrads backward(const ForwardCache& cache, const Mat& upstream,
                      Mat* input_grad = nullptr) const {
        if (upstream.rows() != layer_sizes.back() || upstream.cols() != cache.X.cols())
            throw ConfigError("mlp: upstream gradient shape mismatch");
        MlpGrads g;
        g.dW.assign(W.size(), Mat());
        g.db.assign(W.size(), Vec());
        Mat delta;
        if (out_act == OutputActivation::identity) {
            delta = upstream;
        } else {
            Mat t = cache.pre.back().array().tanh();
            delta = upstream.array() * (out_scale * (1.0 - t.array().square()));
        }
        for (size_t li = W.size(); li-- > 0;) {
            const Mat& below = (li == 0) ? cache.X : cache.post[li - 1];
            g.dW[li] = delta * below.transpose();
            g.db[li] = delta.rowwise().sum();
            if (li > 0) {
                Mat back = W[li].transpose() * delta;
                delta = back.array() * (1.0 - cache.post[li - 1].array().square());
            } else if (input_grad) {
                *input_grad = W[0].transpose() * delta;
            }
        }
        return g;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ConfigError("mlp: cannot open " + path + " for writing");
        auto put_u64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
        put_u64(kMagic);
        put_u64(layer_sizes.size());
        for (int s : layer_sizes) put_u64(uint64_t(s));
        put_u64(uint64_t(out_act));
        out.write(reinterpret_cast<const char*>(&out_scale), 8);
        for (size_t l = 0; l < W.size(); ++l) {
            out.write(reinterpret_cast<const char*>(W[l].data()), 8 * W[l].size());
            out.write(reinterpret_cast<const char*>(b[l].data()), 8 * b[l].size());
        }
        if (!out) throw ConfigError("mlp: write failed for " + path);
    }

    static Mlp load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("mlp: cannot open " + path);
        auto get_u64 = [&]() {
            uint64_t v = 0;
            in.read(reinterpret_cast<char*>(&v), 8);
            if (!in) throw ConfigError("mlp: truncated checkpoint " + path);
            return v;
        };
        if (get_u64() != kMagic) throw ConfigError("mlp: bad magic in " + path);
        uint64_t n = get_u64();
        if (n < 2 || n > 64) throw ConfigError("mlp: invalid layer count in " + path);
        Mlp net;
        for (uint64_t i = 0; i < n; ++i) {
            uint64_t s = get_u64();
            if (s == 0 || s > (1u << 20)) throw ConfigError("mlp: invalid layer size in " + path);
            net.layer_sizes.push_back(int(s));
        }
        uint64_t act = get_u64();
        if (act > 1) throw ConfigError("mlp: invalid output activation in " + path);
        net.out_act = OutputActivation(act);
        in.read(reinterpret_cast<char*>(&net.out_scale), 8);
        if (!in) throw ConfigError("mlp: truncated checkpoint " + path);
        for (size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
            Mat w(net.layer_sizes[l + 1], net.layer_sizes[l]);
            Vec bias(net.layer_sizes[l + 1]);
            in.read(reinterpret_cast<char*>(w.data()), 8 * w.size());
            in.read(reinterpret_cast<char*>(bias.data()), 8 * bias.size());
            if (!in) throw ConfigError("mlp: truncated checkpoint " + path);
            net.W.push_back(std::move(w));
            net.b.push_back(std::move(bias));
        }
        return net;
    }

  private:
    static constexpr uint64_t kMagic = 0x52724c6e65743031ull;  // "RrLnet01"
};

struct AdamState {
    std::vector<Mat> mW, vW;
    std::vector<Vec> mb, vb;
    long step = 0;
    double lr;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    AdamState() : lr(0.0) {}  // placeholder; reassign from a real net before use
    AdamState(const Mlp& net, double learning_rate) : lr(learning_rate) {
        for (size_t l = 0; l < net.W.size(); ++l) {
            mW.push_back(Mat::Zero(net.W[l].rows(), net.W[l].cols()));
            vW.push_back(Mat::Zero(net.W[l].rows(), net.W[l].cols()));
            mb.push_back(Vec::Zero(net.b[l].size()));
            vb.push_back(Vec::Zero(net.b[l].size()));
        }
    }
};

inline void optim_step(Mlp& net, const MlpGrads& g, AdamState& opt) {
    if (g.dW.size() != net.W.size()) throw ConfigError("optim_step: gradient layer count mismatch");
    for (size_t l = 0; l < net.W.size(); ++l)
        if (!g.dW[l].allFinite() || !g.db[l].allFinite())
            throw TrainingError("optim_step: non-finite gradient at layer " + std::to_string(l));
    opt.step += 1;
    double c1 = 1.0 - std::pow(opt.beta1, double(opt.step));
    double c2 = 1.0 - std::pow(opt.beta2, double(opt.step));
    for (size_t l = 0; l < net.W.size(); ++l) {
        opt.mW[l] = opt.beta1 * opt.mW[l] + (1.0 - opt.beta1) * g.dW[l];
        opt.vW[l] = opt.beta2 * opt.vW[l] + (1.0 - opt.beta2) * g.dW[l].array().square().matrix();
        net.W[l].array() -=
            opt.lr * (opt.mW[l].array() / c1) / ((opt.vW[l].array() / c2).sqrt() + opt.eps);
        opt.mb[l] = opt.beta1 * opt.mb[l] + (1.0 - opt.beta1) * g.db[l];
        opt.vb[l] = opt.beta2 * opt.vb[l] + (1.0 - opt.beta2) * g.db[l].array().square().matrix();
        net.b[l].array() -=
            opt.lr * (opt.mb[l].array() / c1) / ((opt.vb[l].array() / c2).sqrt() + opt.eps);
    }
}

}  // namespace rlcbf
