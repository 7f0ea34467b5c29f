#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "falconsim/dqn.hpp"
#include "falconsim/nn.hpp"
#include "falconsim/rng.hpp"

namespace falconsim {

// Family of two-action contextual tasks, indexed by p in [0,1]. The optimal
// action is the sign of a direction vector (cos pi*p, sin pi*p) applied to the
// first two state features; the remaining features are distractors. Reward is
// +1 for the optimal action, -1 otherwise, so the oracle expected reward is 1.
// Used to exercise meta-learning and adaptation machinery on a problem with a
// known optimum.
struct ToyTask {
    double p = 0.0;
    int dim = 8;
    bool flipped = false; // invert the action labels (a distinct second task)

    double margin(const std::vector<double>& x) const {
        const double m = std::cos(pi() * p) * x[0] + std::sin(pi() * p) * x[1];
        return flipped ? -m : m;
    }
    int best_action(const std::vector<double>& x) const {
        return margin(x) >= 0.0 ? 1 : 0;
    }
    double reward(const std::vector<double>& x, int action) const {
        return action == best_action(x) ? 1.0 : -1.0;
    }
    static double pi() { return 3.141592653589793; }
};

inline std::vector<double> toy_sample_state(const ToyTask& task, Rng& rng) {
    std::vector<double> x(static_cast<std::size_t>(task.dim));
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    return x;
}

// One-shot episodes: each transition is terminal, so Q-targets equal the
// immediate reward.
inline std::vector<Transition> toy_collect(const ToyTask& task, int n,
                                           Rng& rng) {
    std::vector<Transition> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Transition t;
        t.s = toy_sample_state(task, rng);
        t.a = static_cast<int>(rng.uniform_int(2));
        t.r = task.reward(t.s, t.a);
        t.s_next.assign(static_cast<std::size_t>(task.dim), 0.0);
        t.done = true;
        out.push_back(std::move(t));
    }
    return out;
}

// Fraction of states on which the greedy policy of `net` picks the optimal
// action. Oracle value is 1.
inline double toy_greedy_accuracy(const Mlp& net, const ToyTask& task, int n,
                                  Rng& rng) {
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        const auto x = toy_sample_state(task, rng);
        const auto q = net.forward(x);
        const int a = q[1] > q[0] ? 1 : 0;
        if (a == task.best_action(x)) ++correct;
    }
    return double(correct) / double(n);
}

// Bucket index of p when [0,1] is split into `subranges` equal intervals.
inline int toy_bucket(double p, int subranges) {
    int b = static_cast<int>(p * subranges);
    if (b >= subranges) b = subranges - 1;
    if (b < 0) b = 0;
    return b;
}

} // namespace falconsim
