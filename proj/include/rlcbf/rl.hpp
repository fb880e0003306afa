#pragma once

// Off-policy deterministic actor-critic (DDPG) with replay, target networks
// and Gaussian exploration noise, plus the compensator regression that
// approximates the accumulated CBF corrections. The critic is trained on the
// deployed action; the actor gradient flows through its own output only, with
// any committed compensation supplied as part of the critic's action input.

#include <rlcbf/common.hpp>
#include <rlcbf/mlp.hpp>

#include <functional>
#include <optional>
#include <unordered_set>
#include <utility>
#include <vector>

namespace rlcbf {

struct AgentConfig {
    double gamma = 0.99;
    double tau_target = 5e-3;
    int batch = 64;
    int buffer_capacity = 100000;
    double noise_std_init = 0.10;   // fraction of the action half-width
    double noise_std_final = 0.01;  // linear decay target over a training run
    double actor_lr = 1e-4;  // slower than the critic, the usual DDPG asymmetry
    double critic_lr = 1e-3;
    std::vector<int> actor_hidden = {64, 64};
    std::vector<int> critic_hidden = {64, 64};

    void validate() const {
        if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("agent: gamma must be in [0,1)");
        if (!(tau_target > 0.0 && tau_target <= 1.0))
            throw ConfigError("agent: tau_target must be in (0,1]");
        if (batch < 1) throw ConfigError("agent: batch must be >= 1");
        if (buffer_capacity < batch) throw ConfigError("agent: buffer smaller than a batch");
        if (noise_std_init < 0 || noise_std_final < 0)
            throw ConfigError("agent: negative exploration noise");
        if (actor_lr <= 0 || critic_lr <= 0) throw ConfigError("agent: learning rates must be > 0");
        if (actor_hidden.empty() || critic_hidden.empty())
            throw ConfigError("agent: need at least one hidden layer");
    }

    bool operator==(const AgentConfig&) const = default;
};

struct Transition {
    Vec s, u;
    double r = 0.0;
    Vec s2;
    bool done = false;
};

class ReplayBuffer {
  public:
    explicit ReplayBuffer(size_t capacity) : cap_(capacity) {
        if (capacity == 0) throw ConfigError("replay: capacity must be positive");
        data_.reserve(std::min<size_t>(capacity, 1 << 16));
    }

    void push(Transition t) {
        if (data_.size() < cap_) {
            data_.push_back(std::move(t));
        } else {
            data_[head_] = std::move(t);
            head_ = (head_ + 1) % cap_;
        }
    }

    size_t size() const { return data_.size(); }
    const Transition& operator[](size_t i) const { return data_[i]; }

    // Uniform without replacement within the batch.
    std::vector<const Transition*> sample(int batch, std::mt19937_64& rng) const {
        if (batch < 1 || size_t(batch) > data_.size())
            throw ConfigError("replay: batch of " + std::to_string(batch) + " from " +
                              std::to_string(data_.size()) + " transitions");
        std::vector<const Transition*> out;
        out.reserve(size_t(batch));
        std::uniform_int_distribution<size_t> pick(0, data_.size() - 1);
        std::unordered_set<size_t> used;
        while (out.size() < size_t(batch)) {
            size_t i = pick(rng);
            if (used.insert(i).second) out.push_back(&data_[i]);
        }
        return out;
    }

  private:
    size_t cap_;
    size_t head_ = 0;
    std::vector<Transition> data_;
};

class DdpgAgent {
  public:
    DdpgAgent(int state_dim, int action_dim, Vec act_low, Vec act_high, AgentConfig cfg,
              std::mt19937_64& init_rng)
        : cfg_(cfg), sdim_(state_dim), adim_(action_dim), low_(std::move(act_low)),
          high_(std::move(act_high)) {
        cfg_.validate();
        if (state_dim < 1 || action_dim < 1) throw ConfigError("agent: bad dimensions");
        if (low_.size() != adim_ || high_.size() != adim_ || (low_.array() >= high_.array()).any())
            throw ConfigError("agent: action box malformed");

        double half_width = ((high_ - low_) / 2.0).maxCoeff();
        std::vector<int> asz = {sdim_};
        asz.insert(asz.end(), cfg_.actor_hidden.begin(), cfg_.actor_hidden.end());
        asz.push_back(adim_);
        actor_ = Mlp::init(asz, OutputActivation::scaled_tanh, half_width, init_rng);
        std::vector<int> csz = {sdim_ + adim_};
        csz.insert(csz.end(), cfg_.critic_hidden.begin(), cfg_.critic_hidden.end());
        csz.push_back(1);
        critic_ = Mlp::init(csz, OutputActivation::identity, 1.0, init_rng);
        actor_target_ = actor_;
        critic_target_ = critic_;
        actor_opt_ = AdamState(actor_, cfg_.actor_lr);
        critic_opt_ = AdamState(critic_, cfg_.critic_lr);
    }

    const AgentConfig& config() const { return cfg_; }
    const Mlp& actor() const { return actor_; }
    const Mlp& critic() const { return critic_; }
    const Mlp& actor_target() const { return actor_target_; }
    const Mlp& critic_target() const { return critic_target_; }
    Mlp& actor_mut() { return actor_; }
    Mlp& critic_mut() { return critic_; }
    void zero_actor_output() {
        actor_.zero_output_layer();
        actor_target_ = actor_;
    }

    Vec act(const Vec& s, double noise_std, std::mt19937_64& rng) const {
        Mat col(sdim_, 1);
        col.col(0) = s;
        Vec u = actor_.forward(col).col(0);
        if (noise_std > 0.0)
            for (int i = 0; i < adim_; ++i) u[i] += gaussian(rng, 0.0, noise_std);
        return u.cwiseMax(low_).cwiseMin(high_);
    }

    double q_value(const Vec& s, const Vec& u) const {
        Mat col(sdim_ + adim_, 1);
        col.col(0).head(sdim_) = s;
        col.col(0).tail(adim_) = u;
        return critic_.forward(col)(0, 0);
    }

    // One gradient step on a replay batch. u_bar_fn, when given, is the
    // committed compensator: it shifts the action the critic sees around the
    // actor's own output, for both the bootstrap target and the policy
    // gradient, without receiving gradient itself.
    void update(const std::vector<const Transition*>& batch,
                const std::function<Vec(const Vec&)>* u_bar_fn = nullptr) {
        const int B = int(batch.size());
        if (B < 1) throw ConfigError("agent: empty batch");

        Mat S(sdim_, B), S2(sdim_, B), SU(sdim_ + adim_, B);
        Vec r(B), not_done(B);
        for (int i = 0; i < B; ++i) {
            S.col(i) = batch[size_t(i)]->s;
            S2.col(i) = batch[size_t(i)]->s2;
            SU.col(i).head(sdim_) = batch[size_t(i)]->s;
            SU.col(i).tail(adim_) = batch[size_t(i)]->u;
            r[i] = batch[size_t(i)]->r;
            not_done[i] = batch[size_t(i)]->done ? 0.0 : 1.0;
        }

        Mat ubar2 = Mat::Zero(adim_, B);
        if (u_bar_fn)
            for (int i = 0; i < B; ++i) ubar2.col(i) = (*u_bar_fn)(batch[size_t(i)]->s2);

        // y = r + gamma (1 - done) Q'(s', clip(mu'(s') + ubar(s')))
        Mat A2 = actor_target_.forward(S2) + ubar2;
        for (int i = 0; i < B; ++i) A2.col(i) = A2.col(i).cwiseMax(low_).cwiseMin(high_);
        Mat SU2(sdim_ + adim_, B);
        SU2.topRows(sdim_) = S2;
        SU2.bottomRows(adim_) = A2;
        Vec q2 = critic_target_.forward(SU2).row(0).transpose();
        Vec y = r + cfg_.gamma * not_done.cwiseProduct(q2);

        // critic regression toward y
        Mlp::ForwardCache ccache;
        Vec pred = critic_.forward_cached(SU, ccache).row(0).transpose();
        Vec err = pred - y;
        critic_loss_ = err.squaredNorm() / B;
        if (!std::isfinite(critic_loss_))
            throw TrainingError("agent: non-finite critic loss (|batch| reward " +
                                std::to_string(r.cwiseAbs().maxCoeff()) + ")");
        Mat dpred = (2.0 / B) * err.transpose();
        MlpGrads cgrads = critic_.backward(ccache, dpred);
        optim_step(critic_, cgrads, critic_opt_);

        // actor ascends Q(s, mu(s) + ubar(s)); gradient flows through mu only
        Mlp::ForwardCache acache;
        Mat mu = actor_.forward_cached(S, acache);
        Mat ubar1 = Mat::Zero(adim_, B);
        if (u_bar_fn)
            for (int i = 0; i < B; ++i) ubar1.col(i) = (*u_bar_fn)(batch[size_t(i)]->s);
        Mat SUa(sdim_ + adim_, B);
        SUa.topRows(sdim_) = S;
        SUa.bottomRows(adim_) = mu + ubar1;
        Mlp::ForwardCache qcache;
        Vec q = critic_.forward_cached(SUa, qcache).row(0).transpose();
        actor_objective_ = q.mean();
        Mat dq = Mat::Constant(1, B, -1.0 / B);  // minimize -mean Q
        Mat dinput;
        critic_.backward(qcache, dq, &dinput);
        Mat dact = dinput.bottomRows(adim_);
        MlpGrads agrads = actor_.backward(acache, dact);
        optim_step(actor_, agrads, actor_opt_);

        soft_update(actor_target_, actor_);
        soft_update(critic_target_, critic_);
    }

    double last_critic_loss() const { return critic_loss_; }
    double last_actor_objective() const { return actor_objective_; }

  private:
    void soft_update(Mlp& target, const Mlp& online) const {
        for (size_t li = 0; li < online.W.size(); ++li) {
            target.W[li] = cfg_.tau_target * online.W[li] + (1.0 - cfg_.tau_target) * target.W[li];
            target.b[li] = cfg_.tau_target * online.b[li] + (1.0 - cfg_.tau_target) * target.b[li];
        }
    }

    AgentConfig cfg_;
    int sdim_, adim_;
    Vec low_, high_;
    Mlp actor_, critic_, actor_target_, critic_target_;
    AdamState actor_opt_, critic_opt_;
    double critic_loss_ = 0.0;
    double actor_objective_ = 0.0;
};

// Mean-squared regression of state -> accumulated CBF correction, warm-started
// from the current parameters. Returns the full-dataset MSE after fitting, or
// nothing when the dataset is empty (the net is left untouched).
inline std::optional<double> compensator_fit(Mlp& net, AdamState& opt,
                                             const std::vector<std::pair<Vec, Vec>>& data,
                                             int updates, int batch, std::mt19937_64& rng) {
    if (data.empty()) return std::nullopt;
    const int n = int(data.size());
    const int in_dim = int(data[0].first.size());
    const int out_dim = int(data[0].second.size());
    const int bs = std::min(batch, n);
    std::uniform_int_distribution<int> pick(0, n - 1);

    Mat X(in_dim, bs), Y(out_dim, bs);
    for (int step = 0; step < updates; ++step) {
        for (int i = 0; i < bs; ++i) {
            const auto& [x, y] = data[size_t(pick(rng))];
            X.col(i) = x;
            Y.col(i) = y;
        }
        Mlp::ForwardCache cache;
        Mat pred = net.forward_cached(X, cache);
        Mat dpred = (2.0 / bs) * (pred - Y);
        MlpGrads grads = net.backward(cache, dpred);
        optim_step(net, grads, opt);
    }

    Mat Xa(in_dim, n), Ya(out_dim, n);
    for (int i = 0; i < n; ++i) {
        Xa.col(i) = data[size_t(i)].first;
        Ya.col(i) = data[size_t(i)].second;
    }
    double mse = (net.forward(Xa) - Ya).squaredNorm() / n;
    if (!std::isfinite(mse)) throw TrainingError("compensator: non-finite loss after fit");
    return mse;
}

}  // namespace rlcbf
