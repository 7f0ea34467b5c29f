#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "falconsim/nn.hpp"
#include "falconsim/rng.hpp"
#include "falconsim/sched.hpp"

namespace falconsim {

using StateVec = std::vector<double>;

// Per path: cwnd/srtt, inflight/srtt, swnd_share/srtt, srtt/100 —
// concatenated over paths (d = 4 * paths). Units packets/ms; the raw srtt is
// scaled to keep all features within a similar numeric range.
inline StateVec state_from_view(const SchedulerView& view) {
    StateVec s;
    s.reserve(view.paths.size() * 4);
    for (const auto& p : view.paths) {
        const double srtt = std::max(p.srtt_ms, 1e-6);
        s.push_back(p.cwnd / srtt);
        s.push_back(double(p.inflight) / srtt);
        s.push_back(p.swnd_share / srtt);
        s.push_back(srtt / 100.0);
    }
    return s;
}

// Reward: bytes acked on the connection within the packet's flight window
// divided by the elapsed time since send, normalized to [0,1] by the
// configured maximum path bandwidth. Lost packets earn 0.
inline double packet_reward(const PacketFeedback& fb, double max_bandwidth_bps) {
    if (!fb.acked) return 0.0;
    const double elapsed = std::max(fb.done_time_s - fb.send_time_s, 1e-9);
    const double bytes = std::max(fb.flight_bytes, fb.size_bytes);
    const double rate = bytes / elapsed;                         // bytes/s
    const double cap = std::max(max_bandwidth_bps / 8.0, 1e-9); // bytes/s
    return std::min(rate / cap, 1.0);
}

struct Transition {
    StateVec s;
    int a = 0;
    double r = 0.0;
    StateVec s_next;
    bool done = false;
};

// Fixed-capacity ring buffer, FIFO eviction, uniform sampling without
// replacement within one batch.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    void push(Transition t) {
        if (buf_.size() < capacity_) {
            buf_.push_back(std::move(t));
        } else {
            buf_[head_] = std::move(t);
            head_ = (head_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return buf_.size(); }
    std::size_t capacity() const { return capacity_; }
    void clear() { buf_.clear(); head_ = 0; }

    const Transition& at(std::size_t i) const { return buf_[i]; }

    // Uniform without replacement; if fewer than n stored, returns all.
    std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
        std::vector<std::size_t> idx(buf_.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        // partial Fisher-Yates
        const std::size_t take = std::min(n, idx.size());
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + rng.uniform_int(idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        std::vector<const Transition*> out;
        out.reserve(take);
        for (std::size_t i = 0; i < take; ++i) out.push_back(&buf_[idx[i]]);
        return out;
    }

private:
    std::size_t capacity_;
    std::vector<Transition> buf_;
    std::size_t head_ = 0;
};

struct AgentConfig {
    double gamma = 0.9;
    double epsilon = 0.1;
    double lr = 0.001;
    int batch = 32;
    std::size_t replay_capacity = 5000;
    int target_sync_interval = 200;
    std::vector<int> hidden = {32, 32, 32};
};

// Q-learning agent: epsilon-greedy acting on the online net, TD training
// against a periodically synced target net.
class DqnAgent {
public:
    DqnAgent(int state_dim, int n_actions, AgentConfig cfg, std::uint64_t seed)
        : cfg_(cfg), n_actions_(n_actions) {
        std::vector<int> sizes;
        sizes.push_back(state_dim);
        for (int h : cfg.hidden) sizes.push_back(h);
        sizes.push_back(n_actions);
        Rng rng(seed);
        online_ = Mlp(sizes, rng);
        target_ = online_;
        replay_ = std::make_unique<ReplayBuffer>(cfg.replay_capacity);
    }

    AgentConfig& config() { return cfg_; }
    const AgentConfig& config() const { return cfg_; }
    int action_count() const { return n_actions_; }

    const Mlp& online_net() const { return online_; }
    Mlp& online_net() { return online_; }
    void set_online_params(const std::vector<double>& p) { online_.set_params(p); }
    void sync_target() { target_ = online_; }

    ReplayBuffer& replay() { return *replay_; }
    const ReplayBuffer& replay() const { return *replay_; }

    std::vector<double> q_values(const StateVec& s) const {
        return online_.forward(s);
    }

    static int argmax(const std::vector<double>& q) {
        int best = 0;
        for (std::size_t i = 1; i < q.size(); ++i)
            if (q[i] > q[best]) best = static_cast<int>(i);
        return best;
    }

    int act(const StateVec& s, Rng& rng) const {
        if (rng.uniform() < cfg_.epsilon)
            return static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_actions_)));
        return argmax(q_values(s));
    }

    int greedy(const StateVec& s) const { return argmax(q_values(s)); }

    void observe(Transition t) { replay_->push(std::move(t)); }

    // One mini-batch TD step; returns the batch loss, or nothing when the
    // replay holds fewer than `batch` transitions.
    std::optional<double> train_step(Rng& rng) {
        if (replay_->size() < static_cast<std::size_t>(cfg_.batch)) return std::nullopt;
        const auto batch = replay_->sample(static_cast<std::size_t>(cfg_.batch), rng);
        Minibatch mb;
        for (const Transition* t : batch) {
            std::vector<double> target(static_cast<std::size_t>(n_actions_), 0.0);
            std::vector<double> mask(static_cast<std::size_t>(n_actions_), 0.0);
            double y = t->r;
            if (!t->done) {
                const auto qn = target_.forward(t->s_next);
                y += cfg_.gamma * *std::max_element(qn.begin(), qn.end());
                // rewards live in [0,1], so returns live in [0, 1/(1-gamma)];
                // clamping the bootstrap target blocks runaway overestimation
                if (cfg_.gamma < 1.0) {
                    y = std::clamp(y, std::min(0.0, t->r), 1.0 / (1.0 - cfg_.gamma));
                }
            }
            target[static_cast<std::size_t>(t->a)] = y;
            mask[static_cast<std::size_t>(t->a)] = 1.0;
            mb.inputs.push_back(t->s);
            mb.targets.push_back(std::move(target));
            mb.mask.push_back(std::move(mask));
        }
        const double loss = online_.loss(mb);
        online_.sgd_step(online_.backward(mb), cfg_.lr);
        if (++train_steps_ % cfg_.target_sync_interval == 0) sync_target();
        return loss;
    }

    std::uint64_t train_steps() const { return train_steps_; }

private:
    AgentConfig cfg_;
    int n_actions_;
    Mlp online_;
    Mlp target_;
    std::unique_ptr<ReplayBuffer> replay_;
    std::uint64_t train_steps_ = 0;
};

} // namespace falconsim
