#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "falconsim/falcon.hpp"
#include "falconsim/netsim.hpp"
#include "falconsim/toy.hpp"
#include "falconsim/transport.hpp"

namespace falconsim {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Path presets and scenarios
// ---------------------------------------------------------------------------

// Static per-technology link models. The desk-scale profile divides bandwidth
// by 10 so full experiment suites finish in minutes; latency and loss are
// unchanged.
inline PathModel preset_path(const std::string& name, bool desk_scale) {
    PathModel m;
    if (name == "5g") {
        m = {1100e6, 27.4, 6.4, 0.001};
    } else if (name == "4g") {
        m = {140e6, 29.2, 4.8, 0.001};
    } else if (name == "wlan") {
        m = {30e6, 20.0, 10.0, 0.007};
    } else {
        throw ConfigError("unknown path preset: " + name);
    }
    if (desk_scale) m.bandwidth_bps /= 10.0;
    return m;
}

// Synthetic time-varying 5G-like link for mobile scenarios: bandwidth and RTT
// oscillate deterministically, with occasional deep fades.
inline PathTrace driving_trace(bool desk_scale, int phase = 0) {
    PathTrace t;
    const PathModel base = preset_path("5g", desk_scale);
    const int n = 20;
    const double step_s = 2.0;
    for (int k = 0; k < n; ++k) {
        const double u = std::sin(0.9 * double(k + phase) + 0.3 * phase);
        PathModel m = base;
        m.bandwidth_bps = base.bandwidth_bps * (0.25 + 0.7 * 0.5 * (1.0 + u));
        m.rtt_mean_ms = base.rtt_mean_ms * (1.0 + 0.8 * 0.5 * (1.0 - u));
        m.rtt_dev_ms = base.rtt_dev_ms * (1.0 + 0.5 * 0.5 * (1.0 - u));
        m.loss_rate = (k + phase) % 7 == 5 ? 0.02 : base.loss_rate;
        t.segments.push_back({double(k) * step_s, m});
    }
    t.duration_s = double(n) * step_s;
    return t;
}

struct ScenarioSpec {
    std::string name;
    std::vector<PathTrace> traces;
};

inline ScenarioSpec make_scenario(const std::string& name, bool desk_scale) {
    auto split2 = [&](const std::string& a, const std::string& b) {
        ScenarioSpec s;
        s.name = name;
        s.traces.push_back(single_segment_trace(preset_path(a, desk_scale)));
        s.traces.push_back(single_segment_trace(preset_path(b, desk_scale)));
        return s;
    };
    if (name == "4g+wlan") return split2("4g", "wlan");
    if (name == "4g+5g") return split2("4g", "5g");
    if (name == "5g+wlan") return split2("5g", "wlan");
    if (name == "driving") {
        ScenarioSpec s;
        s.name = name;
        s.traces.push_back(driving_trace(desk_scale, 0));
        s.traces.push_back(driving_trace(desk_scale, 3));
        return s;
    }
    throw ConfigError("unknown scenario: " + name);
}

// Combined peak capacity: sum over paths of each path's fastest segment.
// Used to normalize goodput-based rewards to [0, 1].
inline double scenario_max_bandwidth(const ScenarioSpec& s) {
    double b = 0.0;
    for (const auto& t : s.traces) {
        double peak = 0.0;
        for (const auto& seg : t.segments) peak = std::max(peak, seg.model.bandwidth_bps);
        b += peak;
    }
    return b;
}

// Bucket-relevant condition summary of a static link model.
inline PathCondition condition_of(const PathModel& m) {
    PathCondition c;
    c.loss_pct = 100.0 * m.loss_rate;
    c.rtt_mean_ms = m.rtt_mean_ms;
    c.rtt_var_pct = 100.0 * m.rtt_dev_ms / m.rtt_mean_ms;
    return c;
}

inline NetworkCondition condition_of(const std::vector<PathModel>& models) {
    NetworkCondition c;
    for (const auto& m : models) c.paths.push_back(condition_of(m));
    return c;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::string scenario = "4g+wlan";
    std::vector<std::string> trace_files; // overrides scenario when non-empty
    std::string scheduler = "minrtt";
    int repetitions = 120;
    double transfer_bytes = 2e6;
    std::uint64_t seed = 1;
    std::string out_dir;
    bool desk_scale = true;

    // transport
    double packet_bytes = 1250.0;
    double swnd_packets = 60.0;

    // learning
    double lr = 0.001;
    double gamma = 0.9;
    double eps_large = 0.3;
    double eps_small = 0.1;
    int batch = 32;
    int k_steps = 16;
    double lambda = 0.25;
    int meta_iters = 50;
    int hidden_units = 32;
    int hidden_layers = 3;
    std::size_t replay_capacity = 5000;
    int target_sync = 200;
    int train_period = 32;         // online: train every N transitions
    int offline_train_period = 1;  // offline pretraining trains per packet
    std::uint64_t train_budget_packets = 40000; // offline pretraining budget
    std::size_t w_min = 100;

    // change detection
    double cpd_hazard = 1.0 / 250.0;
    double cpd_threshold = 0.5;

    // evaluation
    int eval_transfers = 7;      // transfers per convergence snapshot
    int convergence_runs = 10;
    std::uint64_t max_checkpoint = 65536;
    int stress_conditions = 24;

    void validate() const {
        if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
        if (!(transfer_bytes > 0)) throw ConfigError("transfer_bytes must be > 0");
        if (!(packet_bytes > 0)) throw ConfigError("packet_bytes must be > 0");
        if (!(swnd_packets >= 1)) throw ConfigError("swnd_packets must be >= 1");
        if (k_steps < 0) throw ConfigError("k_steps must be >= 0");
        if (batch < 1) throw ConfigError("batch must be >= 1");
    }
};

inline void apply_config_kv(ExperimentConfig& cfg, const std::string& key,
                            const std::string& value) {
    auto as_d = [&] {
        try { return std::stod(value); }
        catch (...) { throw ConfigError("bad numeric value for " + key); }
    };
    auto as_i = [&] { return static_cast<int>(as_d()); };
    auto as_u = [&] {
        try { return std::stoull(value); }
        catch (...) { throw ConfigError("bad integer value for " + key); }
    };
    auto as_b = [&] {
        if (value == "true" || value == "1") return true;
        if (value == "false" || value == "0") return false;
        throw ConfigError("bad boolean value for " + key);
    };
    if (key == "scenario") cfg.scenario = value;
    else if (key == "trace1" || key == "trace2") {
        cfg.trace_files.resize(2);
        cfg.trace_files[key == "trace1" ? 0 : 1] = value;
    }
    else if (key == "scheduler") cfg.scheduler = value;
    else if (key == "repetitions") cfg.repetitions = as_i();
    else if (key == "transfer_bytes") cfg.transfer_bytes = as_d();
    else if (key == "seed") cfg.seed = as_u();
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "desk_scale") cfg.desk_scale = as_b();
    else if (key == "packet_bytes") cfg.packet_bytes = as_d();
    else if (key == "swnd_packets") cfg.swnd_packets = as_d();
    else if (key == "lr") cfg.lr = as_d();
    else if (key == "gamma") cfg.gamma = as_d();
    else if (key == "eps_large") cfg.eps_large = as_d();
    else if (key == "eps_small") cfg.eps_small = as_d();
    else if (key == "batch") cfg.batch = as_i();
    else if (key == "k_steps") cfg.k_steps = as_i();
    else if (key == "lambda") cfg.lambda = as_d();
    else if (key == "meta_iters") cfg.meta_iters = as_i();
    else if (key == "hidden_units") cfg.hidden_units = as_i();
    else if (key == "hidden_layers") cfg.hidden_layers = as_i();
    else if (key == "replay_capacity") cfg.replay_capacity = static_cast<std::size_t>(as_u());
    else if (key == "target_sync") cfg.target_sync = as_i();
    else if (key == "train_period") cfg.train_period = as_i();
    else if (key == "offline_train_period") cfg.offline_train_period = as_i();
    else if (key == "train_budget_packets") cfg.train_budget_packets = as_u();
    else if (key == "w_min") cfg.w_min = static_cast<std::size_t>(as_u());
    else if (key == "cpd_hazard") cfg.cpd_hazard = as_d();
    else if (key == "cpd_threshold") cfg.cpd_threshold = as_d();
    else if (key == "eval_transfers") cfg.eval_transfers = as_i();
    else if (key == "convergence_runs") cfg.convergence_runs = as_i();
    else if (key == "max_checkpoint") cfg.max_checkpoint = as_u();
    else if (key == "stress_conditions") cfg.stress_conditions = as_i();
    else throw ConfigError("unknown config key: " + key);
}

// key=value lines; '#' comments and blank lines ignored.
inline ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key=value at line " + std::to_string(lineno));
        apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_config(in);
}

// Full echo of the configuration; parse_config() on this text reproduces it.
inline void write_config(std::ostream& os, const ExperimentConfig& cfg) {
    os << "scenario = " << cfg.scenario << '\n';
    if (cfg.trace_files.size() == 2) {
        if (!cfg.trace_files[0].empty()) os << "trace1 = " << cfg.trace_files[0] << '\n';
        if (!cfg.trace_files[1].empty()) os << "trace2 = " << cfg.trace_files[1] << '\n';
    }
    os << "scheduler = " << cfg.scheduler << '\n'
       << "repetitions = " << cfg.repetitions << '\n'
       << "transfer_bytes = " << cfg.transfer_bytes << '\n'
       << "seed = " << cfg.seed << '\n';
    if (!cfg.out_dir.empty()) os << "out_dir = " << cfg.out_dir << '\n';
    os << "desk_scale = " << (cfg.desk_scale ? "true" : "false") << '\n'
       << "packet_bytes = " << cfg.packet_bytes << '\n'
       << "swnd_packets = " << cfg.swnd_packets << '\n'
       << "lr = " << cfg.lr << '\n'
       << "gamma = " << cfg.gamma << '\n'
       << "eps_large = " << cfg.eps_large << '\n'
       << "eps_small = " << cfg.eps_small << '\n'
       << "batch = " << cfg.batch << '\n'
       << "k_steps = " << cfg.k_steps << '\n'
       << "lambda = " << cfg.lambda << '\n'
       << "meta_iters = " << cfg.meta_iters << '\n'
       << "hidden_units = " << cfg.hidden_units << '\n'
       << "hidden_layers = " << cfg.hidden_layers << '\n'
       << "replay_capacity = " << cfg.replay_capacity << '\n'
       << "target_sync = " << cfg.target_sync << '\n'
       << "train_period = " << cfg.train_period << '\n'
       << "offline_train_period = " << cfg.offline_train_period << '\n'
       << "train_budget_packets = " << cfg.train_budget_packets << '\n'
       << "w_min = " << cfg.w_min << '\n'
       << "cpd_hazard = " << cfg.cpd_hazard << '\n'
       << "cpd_threshold = " << cfg.cpd_threshold << '\n'
       << "eval_transfers = " << cfg.eval_transfers << '\n'
       << "convergence_runs = " << cfg.convergence_runs << '\n'
       << "max_checkpoint = " << cfg.max_checkpoint << '\n'
       << "stress_conditions = " << cfg.stress_conditions << '\n';
}

inline ScenarioSpec resolve_scenario(const ExperimentConfig& cfg) {
    if (!cfg.trace_files.empty()) {
        ScenarioSpec s;
        s.name = "custom";
        for (const auto& path : cfg.trace_files) {
            if (path.empty()) throw ConfigError("both trace1 and trace2 are required");
            std::ifstream in(path);
            if (!in) throw ConfigError("cannot open trace file: " + path);
            s.traces.push_back(load_trace(in));
        }
        return s;
    }
    return make_scenario(cfg.scenario, cfg.desk_scale);
}

inline TransportConfig transport_config(const ExperimentConfig& cfg) {
    TransportConfig tc;
    tc.packet_bytes = cfg.packet_bytes;
    tc.swnd_packets = cfg.swnd_packets;
    return tc;
}

inline FalconConfig learner_config(const ExperimentConfig& cfg,
                                   const ScenarioSpec& scenario) {
    FalconConfig fc;
    fc.agent.lr = cfg.lr;
    fc.agent.gamma = cfg.gamma;
    fc.agent.epsilon = cfg.eps_small;
    fc.agent.batch = cfg.batch;
    fc.agent.replay_capacity = cfg.replay_capacity;
    fc.agent.target_sync_interval = cfg.target_sync;
    fc.agent.hidden.assign(static_cast<std::size_t>(cfg.hidden_layers),
                           cfg.hidden_units);
    fc.meta.k_steps = cfg.k_steps;
    fc.meta.lambda = cfg.lambda;
    fc.meta.meta_iters = cfg.meta_iters;
    fc.meta.eps_large = cfg.eps_large;
    fc.meta.eps_small = cfg.eps_small;
    fc.w_min = cfg.w_min;
    fc.train_period = cfg.train_period;
    fc.n_paths = static_cast<int>(scenario.traces.size());
    fc.max_bandwidth_bps = scenario_max_bandwidth(scenario);
    fc.cpd_rtt.hazard = cfg.cpd_hazard;
    fc.cpd_rtt.detection_threshold = cfg.cpd_threshold;
    fc.cpd_loss.hazard = cfg.cpd_hazard;
    fc.cpd_loss.detection_threshold = cfg.cpd_threshold;
    fc.cpd_loss.min_beta0 = 0.5;
    return fc;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct RunResult {
    std::vector<double> times_s; // per-repetition download time

    double median() const { return percentile(50.0); }
    double mean() const {
        if (times_s.empty()) throw std::runtime_error("empty result");
        double m = 0.0;
        for (double t : times_s) m += t;
        return m / double(times_s.size());
    }
    double percentile(double p) const {
        if (times_s.empty()) throw std::runtime_error("empty result");
        std::vector<double> s = times_s;
        std::sort(s.begin(), s.end());
        if (s.size() == 1) return s[0];
        const double pos = p / 100.0 * double(s.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = static_cast<std::size_t>(std::ceil(pos));
        const double frac = pos - double(lo);
        return s[lo] * (1.0 - frac) + s[hi] * frac;
    }
};

// median(reference) / median(test): > 1 means the test scheduler beats the
// offline-trained reference.
inline double relative_score(const RunResult& test, const RunResult& reference) {
    const double t = test.median();
    const double r = reference.median();
    if (!(t > 0) || !(r > 0)) throw std::runtime_error("non-positive median");
    return r / t;
}

// ---------------------------------------------------------------------------
// Policy evaluation helpers
// ---------------------------------------------------------------------------

// Frozen greedy policy over a Q-network; no exploration, no learning.
class GreedyPolicyScheduler : public Scheduler {
public:
    explicit GreedyPolicyScheduler(Mlp net) : net_(std::move(net)) {}
    std::string name() const override { return "dqn-off"; }
    // Frozen deployment is work-conserving: the argmax is taken over paths
    // that can accept a packet right now. (The learning agent instead defers
    // on a congested pick, which is what generates its penalty signal.)
    SchedulerDecision select(const SchedulerView& view) override {
        const auto q = net_.forward(state_from_view(view));
        int best = -1;
        for (std::size_t i = 0; i < view.paths.size(); ++i) {
            if (!view.paths[i].headroom) continue;
            if (best < 0 || q[i] > q[static_cast<std::size_t>(best)])
                best = static_cast<int>(i);
        }
        if (best < 0) return SchedulerDecision::defer();
        return SchedulerDecision::path(best);
    }
    const Mlp& net() const { return net_; }

private:
    Mlp net_;
};

// `reps` independent transfers, one fresh connection each, per-repetition
// derived seeds. The scheduler persists across repetitions.
inline RunResult measure(const ScenarioSpec& scenario, const ExperimentConfig& cfg,
                         Scheduler& sched, std::uint64_t seed, int reps) {
    RunResult r;
    for (int i = 0; i < reps; ++i) {
        Connection conn(scenario.traces, transport_config(cfg),
                        derive_seed(seed, "rep:" + std::to_string(i)));
        try {
            r.times_s.push_back(conn.transfer(cfg.transfer_bytes, sched));
        } catch (const StallError& e) {
            throw StallError(std::string(e.what()) + " (repetition " +
                             std::to_string(i) + ")");
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Offline training
// ---------------------------------------------------------------------------

struct TrainedPolicy {
    Mlp net;                           // greedy policy after training
    std::vector<Transition> episode;   // the experience it was trained on
};

// Train a DQN on the scenario by continuous exploration (eps_large), training
// densely. Returns the greedy net and the collected experience episode.
inline TrainedPolicy train_policy_once(const ScenarioSpec& scenario,
                                       const ExperimentConfig& cfg,
                                       std::uint64_t seed) {
    FalconConfig fc = learner_config(cfg, scenario);
    fc.agent.epsilon = cfg.eps_large;
    fc.train_period = cfg.offline_train_period;
    FalconAgent agent(LearnerMode::DqnOn, fc, seed);
    Connection conn(scenario.traces, transport_config(cfg),
                    derive_seed(seed, "train-conn"));
    while (conn.total_packets_sent() < cfg.train_budget_packets) {
        conn.begin_transfer(cfg.transfer_bytes, agent);
        conn.pump([&] { return conn.total_packets_sent() >= cfg.train_budget_packets; });
        if (conn.complete()) conn.end_transfer();
        else { conn.abort_transfer(); break; }
    }
    TrainedPolicy out{agent.trainer().online_net(), {}};
    out.episode.reserve(agent.experience().size());
    for (const auto& rec : agent.experience().records()) out.episode.push_back(rec.tr);
    return out;
}

// Offline training with model selection: several independently seeded training
// runs, validating intermediate snapshots of each and keeping the snapshot
// with the best validation median. Off-policy DQN training on closed-loop
// traffic has real seed variance, and a run can pass through a good policy and
// then drift away from it; early-stopping over snapshots recovers both.
inline TrainedPolicy train_policy(const ScenarioSpec& scenario,
                                  const ExperimentConfig& cfg,
                                  std::uint64_t seed, int candidates = 3,
                                  int validation_reps = 9) {
    if (candidates == 1) return train_policy_once(scenario, cfg, seed);

    const std::uint64_t snap_period = std::max<std::uint64_t>(cfg.train_budget_packets / 5, 1);
    TrainedPolicy best;
    double best_median = 0.0;
    bool have_best = false;
    for (int c = 0; c < candidates; ++c) {
        const std::uint64_t cand_seed = derive_seed(seed, "cand:" + std::to_string(c));
        FalconConfig fc = learner_config(cfg, scenario);
        fc.agent.epsilon = cfg.eps_large;
        fc.train_period = cfg.offline_train_period;
        FalconAgent agent(LearnerMode::DqnOn, fc, cand_seed);
        Connection conn(scenario.traces, transport_config(cfg),
                        derive_seed(cand_seed, "train-conn"));
        std::uint64_t next_snap = snap_period;
        auto consider = [&] {
            GreedyPolicyScheduler g(agent.trainer().online_net());
            const double med =
                measure(scenario, cfg, g, derive_seed(seed, "val"), validation_reps).median();
            if (!have_best || med < best_median) {
                have_best = true;
                best_median = med;
                best.net = g.net();
                best.episode.clear();
                best.episode.reserve(agent.experience().size());
                for (const auto& rec : agent.experience().records())
                    best.episode.push_back(rec.tr);
            }
        };
        while (conn.total_packets_sent() < cfg.train_budget_packets) {
            conn.begin_transfer(cfg.transfer_bytes, agent);
            conn.pump([&] {
                if (conn.total_packets_sent() >= next_snap) {
                    next_snap += snap_period;
                    consider();
                }
                return conn.total_packets_sent() >= cfg.train_budget_packets;
            });
            if (conn.complete()) conn.end_transfer();
            else { conn.abort_transfer(); break; }
        }
        consider();
    }
    return best;
}

// Meta-train a bucket bank from per-condition training scenarios: each
// condition contributes its collected experience as one episode under the
// bucket of the generating condition.
inline MetaBank pretrain_bank(const std::vector<std::vector<PathModel>>& conditions,
                              const ExperimentConfig& cfg, std::uint64_t seed) {
    if (conditions.empty()) throw ConfigError("no conditions to pretrain on");
    ScenarioSpec probe;
    probe.name = "pretrain";
    for (const auto& m : conditions.front())
        probe.traces.push_back(single_segment_trace(m));
    FalconConfig fc = learner_config(cfg, probe);
    std::map<int, std::vector<std::vector<Transition>>> episodes;
    double max_bw = 0.0;
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        ScenarioSpec s;
        s.name = "cond:" + std::to_string(i);
        for (const auto& m : conditions[i]) s.traces.push_back(single_segment_trace(m));
        max_bw = std::max(max_bw, scenario_max_bandwidth(s));
        auto tp = train_policy_once(s, cfg, derive_seed(seed, "collect:" + std::to_string(i)));
        episodes[bucket_of(condition_of(conditions[i]))].push_back(std::move(tp.episode));
    }
    fc.max_bandwidth_bps = std::max(fc.max_bandwidth_bps, max_bw);
    MetaBank bank(fc.net_sizes(), fc.meta, derive_seed(seed, "bank"));
    MetaLearner learner(fc.agent, derive_seed(seed, "meta"));
    learner.meta_update_episodes(bank, episodes, 0.0);
    return bank;
}

// Small multiplicative perturbations of a scenario's static models; used to
// build nearby training conditions for the meta bank and for the buffered
// DQN-On variants.
inline std::vector<std::vector<PathModel>>
perturbed_conditions(const ScenarioSpec& scenario,
                     const std::vector<double>& factors) {
    std::vector<PathModel> base;
    for (const auto& t : scenario.traces) base.push_back(t.segments.front().model);
    std::vector<std::vector<PathModel>> out;
    for (double f : factors) {
        std::vector<PathModel> cond;
        for (const auto& m : base) {
            PathModel p = m;
            p.bandwidth_bps = m.bandwidth_bps * f;
            p.rtt_mean_ms = m.rtt_mean_ms * (2.0 - f); // faster link, lower RTT
            p.rtt_dev_ms = m.rtt_dev_ms * (2.0 - f);
            cond.push_back(p);
        }
        out.push_back(std::move(cond));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scheduler construction
// ---------------------------------------------------------------------------

// A scheduler plus the offline assets backing it.
struct SchedulerHandle {
    std::unique_ptr<Scheduler> sched;
    FalconAgent* agent = nullptr;       // set for learning variants
    LinUcbScheduler* bandit = nullptr;  // set for the bandit
};

inline bool is_learning_scheduler(const std::string& name) {
    return name == "falcon" || name == "dqn-off" || name == "bandit" ||
           name == "dqn-on" || name == "dqn-on-z" || name == "dqn-on-n" ||
           name == "dqn-on-w";
}

// Construct a scheduler by name. Learning variants that need offline
// preparation (dqn-off training, falcon bank, dqn-on-n/w buffering) run it
// here, deterministically from `seed`.
inline SchedulerHandle make_scheduler(const std::string& name,
                                      const ScenarioSpec& scenario,
                                      const ExperimentConfig& cfg,
                                      std::uint64_t seed) {
    SchedulerHandle h;
    const FalconConfig fc = learner_config(cfg, scenario);
    if (name == "minrtt") {
        h.sched = std::make_unique<MinRttScheduler>();
    } else if (name == "rr") {
        h.sched = std::make_unique<RoundRobinScheduler>();
    } else if (name == "blest") {
        h.sched = std::make_unique<BlestScheduler>();
    } else if (name == "bandit") {
        auto b = std::make_unique<LinUcbScheduler>(fc, seed);
        h.bandit = b.get();
        h.sched = std::move(b);
    } else if (name == "dqn-off") {
        auto tp = train_policy(scenario, cfg, derive_seed(seed, "dqn-off"));
        h.sched = std::make_unique<GreedyPolicyScheduler>(std::move(tp.net));
    } else if (name == "dqn-on" || name == "dqn-on-z") {
        auto a = std::make_unique<FalconAgent>(LearnerMode::DqnOn, fc, seed);
        h.agent = a.get();
        h.sched = std::move(a);
    } else if (name == "dqn-on-n" || name == "dqn-on-w") {
        auto a = std::make_unique<FalconAgent>(LearnerMode::DqnOn, fc, seed);
        // buffered variants: replay pre-filled (and the net pre-trained) with
        // experience from conditions near (n) or far from (w) the live one
        const auto factors = name == "dqn-on-n"
                                 ? std::vector<double>{0.97, 1.03}
                                 : std::vector<double>{0.25, 1.75};
        ExperimentConfig pre = cfg;
        pre.train_budget_packets = 4000;
        int idx = 0;
        for (const auto& cond : perturbed_conditions(scenario, factors)) {
            ScenarioSpec s;
            s.name = "buffer";
            for (const auto& m : cond) s.traces.push_back(single_segment_trace(m));
            auto tp = train_policy_once(s, pre,
                                        derive_seed(seed, "buffer:" + std::to_string(idx++)));
            for (const auto& t : tp.episode) a->trainer().observe(t);
        }
        Rng rng(derive_seed(seed, "pretrain"));
        for (int i = 0; i < 400; ++i) a->trainer().train_step(rng);
        a->set_policy(a->trainer().online_net());
        h.agent = a.get();
        h.sched = std::move(a);
    } else if (name == "falcon" || name == "falcon-n") {
        // bank meta-trained on the scenario condition's neighbourhood
        auto conds = perturbed_conditions(scenario, {0.9, 1.0, 1.1});
        auto bank = pretrain_bank(conds, cfg, derive_seed(seed, "pretrain-bank"));
        auto a = std::make_unique<FalconAgent>(LearnerMode::Falcon, fc, seed);
        a->set_bank(std::move(bank));
        h.agent = a.get();
        h.sched = std::move(a);
    } else {
        throw ConfigError("unknown scheduler: " + name);
    }
    return h;
}

// Current frozen greedy policy of a learning scheduler, for evaluation.
inline std::optional<Mlp> policy_snapshot(const SchedulerHandle& h) {
    if (h.agent) return h.agent->policy();
    if (auto* g = dynamic_cast<GreedyPolicyScheduler*>(h.sched.get()))
        return g->net();
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

// Bulk-transfer experiment: repeated downloads, one result per repetition.
// Learning schedulers are prepared (trained / converged) before measurement
// and measured with a frozen greedy policy.
inline RunResult run_bulk(const ExperimentConfig& cfg) {
    cfg.validate();
    const ScenarioSpec scenario = resolve_scenario(cfg);
    SchedulerHandle h = make_scheduler(cfg.scheduler, scenario, cfg, cfg.seed);
    std::optional<Mlp> best_net;
    if (h.agent && h.agent->mode() != LearnerMode::DqnOff) {
        // converge online state before measuring: run warmup transfers until
        // FALCON has adapted at least once (or a fixed budget for DQN-On),
        // validating periodic policy snapshots and keeping the best one
        Connection warm(scenario.traces, transport_config(cfg),
                        derive_seed(cfg.seed, "warmup"));
        const std::uint64_t budget =
            h.agent->mode() == LearnerMode::Falcon ? 4000 : cfg.train_budget_packets;
        const std::uint64_t snap_period = std::max<std::uint64_t>(budget / 5, 1);
        std::uint64_t next_snap = snap_period;
        double best_median = 0.0;
        auto consider = [&] {
            GreedyPolicyScheduler g(h.agent->policy());
            const double med =
                measure(scenario, cfg, g, derive_seed(cfg.seed, "warm-val"), 9).median();
            if (!best_net || med < best_median) {
                best_median = med;
                best_net = g.net();
            }
        };
        while (warm.total_packets_sent() < budget) {
            warm.begin_transfer(cfg.transfer_bytes, *h.agent);
            warm.pump([&] {
                if (warm.total_packets_sent() >= next_snap) {
                    next_snap += snap_period;
                    consider();
                }
                return warm.total_packets_sent() >= budget;
            });
            if (warm.complete()) warm.end_transfer();
            else { warm.abort_transfer(); break; }
        }
        consider();
    }
    auto snapshot = policy_snapshot(h);
    if (best_net) snapshot = best_net;
    if (snapshot) {
        GreedyPolicyScheduler frozen(*snapshot);
        return measure(scenario, cfg, frozen, derive_seed(cfg.seed, "measure"),
                       cfg.repetitions);
    }
    return measure(scenario, cfg, *h.sched, derive_seed(cfg.seed, "measure"),
                   cfg.repetitions);
}

struct ConvergenceCurve {
    std::vector<std::uint64_t> checkpoints;
    std::vector<std::vector<double>> per_run; // [run][checkpoint] scores
    std::vector<double> mean_scores;          // per checkpoint

    // First checkpoint at which the mean score reaches `threshold`.
    std::optional<std::uint64_t> packets_to(double threshold) const {
        for (std::size_t i = 0; i < checkpoints.size(); ++i)
            if (mean_scores[i] >= threshold) return checkpoints[i];
        return std::nullopt;
    }
};

inline std::vector<std::uint64_t> convergence_checkpoints(std::uint64_t max_cp) {
    std::vector<std::uint64_t> cps;
    for (std::uint64_t c = 64; c <= max_cp; c *= 2) cps.push_back(c);
    return cps;
}

/// Online-learning cost curve: drive the scheduler continuously; at packet
// checkpoints, freeze its current policy and measure the relative score
// against a DQN trained offline on the same scenario.
inline ConvergenceCurve run_convergence(const ExperimentConfig& cfg) {
    cfg.validate();
    const ScenarioSpec scenario = resolve_scenario(cfg);
    const auto ref = train_policy(scenario, cfg, derive_seed(cfg.seed, "ref"));
    GreedyPolicyScheduler ref_sched(ref.net);
    const std::uint64_t eval_seed = derive_seed(cfg.seed, "eval");
    const RunResult ref_result =
        measure(scenario, cfg, ref_sched, eval_seed, cfg.eval_transfers);

    ConvergenceCurve curve;
    curve.checkpoints = convergence_checkpoints(cfg.max_checkpoint);

    for (int run = 0; run < cfg.convergence_runs; ++run) {
        SchedulerHandle h = make_scheduler(
            cfg.scheduler, scenario, cfg,
            derive_seed(cfg.seed, "learner:" + std::to_string(run)));
        Connection conn(scenario.traces, transport_config(cfg),
                        derive_seed(cfg.seed, "conv-conn:" + std::to_string(run)));
        std::vector<double> scores;
        bool in_transfer = false;
        for (std::uint64_t cp : curve.checkpoints) {
            while (conn.total_packets_sent() < cp) {
                if (!in_transfer) {
                    conn.begin_transfer(cfg.transfer_bytes, *h.sched);
                    in_transfer = true;
                }
                conn.pump([&] { return conn.total_packets_sent() >= cp; });
                if (conn.complete()) {
                    conn.end_transfer();
                    in_transfer = false;
                }
            }
            RunResult eval;
            if (auto snap = policy_snapshot(h)) {
                GreedyPolicyScheduler frozen(*snap);
                eval = measure(scenario, cfg, frozen, eval_seed, cfg.eval_transfers);
            } else if (h.bandit) {
                LinUcbScheduler frozen(*h.bandit); // copy; live arms untouched
                eval = measure(scenario, cfg, frozen, eval_seed, cfg.eval_transfers);
            } else {
                eval = measure(scenario, cfg, *h.sched, eval_seed, cfg.eval_transfers);
            }
            scores.push_back(relative_score(eval, ref_result));
        }
        if (in_transfer) conn.abort_transfer();
        curve.per_run.push_back(std::move(scores));
    }
    curve.mean_scores.assign(curve.checkpoints.size(), 0.0);
    for (const auto& run : curve.per_run)
        for (std::size_t i = 0; i < run.size(); ++i) curve.mean_scores[i] += run[i];
    for (auto& m : curve.mean_scores) m /= double(curve.per_run.size());
    return curve;
}

// ---------------------------------------------------------------------------
// Stress test
// ---------------------------------------------------------------------------

// Per-path envelope spanned by the bundled static presets.
struct ConditionEnvelope {
    double bw_lo, bw_hi;       // bits/s
    double rtt_lo, rtt_hi;     // ms
    double dev_lo, dev_hi;     // ms
    double loss_lo, loss_hi;   // fraction
};

inline ConditionEnvelope preset_envelope(bool desk_scale) {
    const PathModel a = preset_path("5g", desk_scale);
    const PathModel b = preset_path("4g", desk_scale);
    const PathModel c = preset_path("wlan", desk_scale);
    auto lo3 = [](double x, double y, double z) { return std::min(x, std::min(y, z)); };
    auto hi3 = [](double x, double y, double z) { return std::max(x, std::max(y, z)); };
    ConditionEnvelope e;
    e.bw_lo = lo3(a.bandwidth_bps, b.bandwidth_bps, c.bandwidth_bps);
    e.bw_hi = hi3(a.bandwidth_bps, b.bandwidth_bps, c.bandwidth_bps);
    e.rtt_lo = lo3(a.rtt_mean_ms, b.rtt_mean_ms, c.rtt_mean_ms);
    e.rtt_hi = hi3(a.rtt_mean_ms, b.rtt_mean_ms, c.rtt_mean_ms);
    e.dev_lo = lo3(a.rtt_dev_ms, b.rtt_dev_ms, c.rtt_dev_ms);
    e.dev_hi = hi3(a.rtt_dev_ms, b.rtt_dev_ms, c.rtt_dev_ms);
    e.loss_lo = lo3(a.loss_rate, b.loss_rate, c.loss_rate);
    e.loss_hi = hi3(a.loss_rate, b.loss_rate, c.loss_rate);
    return e;
}

// `n` random two-path conditions sampled uniformly within the envelope.
inline std::vector<std::vector<PathModel>>
sample_stress_conditions(int n, int n_paths, bool desk_scale, std::uint64_t seed) {
    const ConditionEnvelope e = preset_envelope(desk_scale);
    Rng rng(derive_seed(seed, "stress-conditions"));
    std::vector<std::vector<PathModel>> out;
    for (int i = 0; i < n; ++i) {
        std::vector<PathModel> cond;
        for (int p = 0; p < n_paths; ++p) {
            PathModel m;
            m.bandwidth_bps = rng.uniform(e.bw_lo, e.bw_hi);
            m.rtt_mean_ms = rng.uniform(e.rtt_lo, e.rtt_hi);
            m.rtt_dev_ms = rng.uniform(e.dev_lo, e.dev_hi);
            m.loss_rate = rng.uniform(e.loss_lo, e.loss_hi);
            cond.push_back(m);
        }
        out.push_back(std::move(cond));
    }
    return out;
}

// Trace per path that hops through the sampled conditions every `interval_s`.
inline std::vector<PathTrace>
switching_traces(const std::vector<std::vector<PathModel>>& conditions,
                 double interval_s) {
    const std::size_t n_paths = conditions.front().size();
    std::vector<PathTrace> traces(n_paths);
    for (std::size_t k = 0; k < conditions.size(); ++k)
        for (std::size_t p = 0; p < n_paths; ++p)
            traces[p].segments.push_back({double(k) * interval_s, conditions[k][p]});
    for (auto& t : traces) t.duration_s = double(conditions.size()) * interval_s;
    return traces;
}

struct StressResult {
    std::vector<double> intervals_s;
    std::vector<double> scores; // one mean score per interval
};

// For each change interval: run the scheduler over a condition-hopping trace
// with a continuous backlog and score each segment's goodput against a DQN
// trained offline on that exact condition.
inline StressResult run_stress(const ExperimentConfig& cfg,
                               const std::vector<double>& intervals_s) {
    cfg.validate();
    for (double i : intervals_s)
        if (!(i > 0)) throw ConfigError("change intervals must be > 0");
    const ScenarioSpec base = resolve_scenario(cfg);
    const int n_paths = static_cast<int>(base.traces.size());
    const auto conditions = sample_stress_conditions(
        cfg.stress_conditions, n_paths, cfg.desk_scale, cfg.seed);

    // per-condition offline references, shared across intervals
    ExperimentConfig ref_cfg = cfg;
    ref_cfg.train_budget_packets = std::min<std::uint64_t>(cfg.train_budget_packets, 8000);
    std::vector<Mlp> ref_nets;
    std::vector<ScenarioSpec> cond_scenarios;
    for (std::size_t k = 0; k < conditions.size(); ++k) {
        ScenarioSpec s;
        s.name = "stress-cond:" + std::to_string(k);
        for (const auto& m : conditions[k]) s.traces.push_back(single_segment_trace(m));
        cond_scenarios.push_back(s);
        ref_nets.push_back(train_policy(s, ref_cfg,
                                        derive_seed(cfg.seed, "stress-ref:" + std::to_string(k)),
                                        /*candidates=*/2, /*validation_reps=*/3)
                               .net);
    }

    StressResult result;
    result.intervals_s = intervals_s;
    for (double interval : intervals_s) {
        // reference goodput per condition over one interval window
        std::vector<double> ref_goodput;
        for (std::size_t k = 0; k < conditions.size(); ++k) {
            GreedyPolicyScheduler ref(ref_nets[k]);
            Connection conn(cond_scenarios[k].traces, transport_config(cfg),
                            derive_seed(cfg.seed, "stress-ref-run:" + std::to_string(k)));
            ref_goodput.push_back(conn.run_for(interval, ref));
        }

        ScenarioSpec hop;
        hop.name = "stress";
        hop.traces = switching_traces(conditions, interval);
        SchedulerHandle h =
            make_scheduler(cfg.scheduler, hop, cfg, derive_seed(cfg.seed, "stress-agent"));
        if (h.agent && h.agent->mode() == LearnerMode::Falcon) {
            // bank meta-trained on the stress conditions themselves
            h.agent->set_bank(
                pretrain_bank(conditions, ref_cfg, derive_seed(cfg.seed, "stress-bank")));
        }
        Connection conn(hop.traces, transport_config(cfg),
                        derive_seed(cfg.seed, "stress-run"));
        conn.begin_transfer(1e15, *h.sched);
        double prev_bytes = 0.0;
        double score_sum = 0.0;
        int scored = 0;
        for (std::size_t k = 0; k < conditions.size(); ++k) {
            const double boundary = double(k + 1) * interval;
            conn.pump([&] { return conn.now() >= boundary; });
            const double seg_bytes = conn.bytes_delivered() - prev_bytes;
            prev_bytes = conn.bytes_delivered();
            if (ref_goodput[k] > 0) {
                score_sum += seg_bytes / ref_goodput[k];
                ++scored;
            }
        }
        conn.abort_transfer();
        result.scores.push_back(scored > 0 ? score_sum / double(scored) : 0.0);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Parameter sweeps (toy task family)
// ---------------------------------------------------------------------------

struct ToySweepConfig {
    int subranges = 3;          // buckets over p in [0,1]
    int train_tasks_per_bucket = 4;
    int episode_len = 512;
    int eval_tasks = 6;         // held-out tasks
    int eval_states = 400;
    int adapt_samples = 512;
    int meta_iters = 60;
    double lambda = 0.5;
    double lr = 0.01;           // toy family trains with a larger step size
    std::vector<int> hidden = {16, 16, 16};
};

inline AgentConfig toy_agent_config(const ToySweepConfig& tc) {
    AgentConfig a;
    a.gamma = 0.0; // single-step episodes
    a.lr = tc.lr;
    a.batch = 32;
    a.hidden = tc.hidden;
    a.replay_capacity = 4096;
    return a;
}

inline std::vector<int> toy_net_sizes(const ToySweepConfig& tc, int dim = 8) {
    std::vector<int> s{dim};
    for (int h : tc.hidden) s.push_back(h);
    s.push_back(2);
    return s;
}

// Meta-train a toy bank with K adaptation steps and score K-step few-shot
// adaptation on held-out tasks. Returns mean greedy accuracy (oracle = 1).
inline double toy_meta_score(int k_steps, const ToySweepConfig& tc,
                             std::uint64_t seed) {
    const AgentConfig agent_cfg = toy_agent_config(tc);
    const auto sizes = toy_net_sizes(tc);
    MetaConfig mc;
    mc.k_steps = k_steps;
    mc.meta_iters = tc.meta_iters;
    mc.lambda = tc.lambda;
    mc.tolerance = 0.0; // run all meta iterations
    MetaBank bank(sizes, mc, derive_seed(seed, "toy-bank"));

    Rng rng(derive_seed(seed, "toy"));
    std::map<int, std::vector<std::vector<Transition>>> episodes;
    for (int b = 0; b < tc.subranges; ++b) {
        for (int i = 0; i < tc.train_tasks_per_bucket; ++i) {
            ToyTask task;
            task.p = (double(b) + rng.uniform()) / double(tc.subranges);
            episodes[b].push_back(toy_collect(task, tc.episode_len, rng));
        }
    }
    if (k_steps > 0) {
        MetaLearner learner(agent_cfg, derive_seed(seed, "toy-meta"));
        learner.meta_update_episodes(bank, episodes, 0.0);
    }

    Rng eval_rng(derive_seed(seed, "toy-eval"));
    double total = 0.0;
    int count = 0;
    for (int i = 0; i < tc.eval_tasks; ++i) {
        ToyTask task;
        task.p = eval_rng.uniform();
        const int bucket = toy_bucket(task.p, tc.subranges);
        auto data = toy_collect(task, tc.adapt_samples, eval_rng);
        std::vector<double> params = bank.initial_params(bucket);
        if (k_steps > 0)
            params = k_step_adapt(sizes, params, data, agent_cfg, k_steps,
                                  derive_seed(seed, "toy-adapt:" + std::to_string(i)));
        Mlp net(sizes, eval_rng);
        net.set_params(params);
        total += toy_greedy_accuracy(net, task, tc.eval_states, eval_rng);
        ++count;
    }
    return total / double(count);
}

struct SweepPoint {
    int value;
    double metric;
};

// axis "k": few-shot score vs K. axis "subranges": minimal K reaching within
// `plateau_tol` of the best achievable score, vs sub-range count.
inline std::vector<SweepPoint> run_param_sweep(const ExperimentConfig& cfg,
                                               const std::string& axis,
                                               double plateau_tol = 0.02) {
    ToySweepConfig tc;
    std::vector<SweepPoint> out;
    if (axis == "k" || axis == "K") {
        for (int k : {0, 1, 2, 4, 8, 16, 32})
            out.push_back({k, toy_meta_score(k, tc, derive_seed(cfg.seed, "sweep-k"))});
        return out;
    }
    if (axis == "subranges") {
        const std::vector<int> ks = {1, 2, 4, 8, 16, 32};
        for (int sr : {1, 2, 3, 6, 9}) {
            ToySweepConfig c = tc;
            c.subranges = sr;
            std::vector<double> scores;
            for (int k : ks)
                scores.push_back(
                    toy_meta_score(k, c, derive_seed(cfg.seed, "sweep-sr")));
            const double best = *std::max_element(scores.begin(), scores.end());
            int min_k = ks.back();
            for (std::size_t i = 0; i < ks.size(); ++i) {
                if (scores[i] >= best - plateau_tol) { min_k = ks[i]; break; }
            }
            out.push_back({sr, double(min_k)});
        }
        return out;
    }
    throw ConfigError("unknown sweep axis: " + axis);
}

// ---------------------------------------------------------------------------
// Result emission
// ---------------------------------------------------------------------------

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os << text;
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

// results.csv (per-repetition rows + summary), cdf.csv, and manifest.cfg (a
// config echo that replays the run).
inline void emit_results(const RunResult& result, const ExperimentConfig& cfg,
                         const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    std::ostringstream rows;
    rows.precision(17);
    rows << "repetition,download_time_s\n";
    for (std::size_t i = 0; i < result.times_s.size(); ++i)
        rows << i << ',' << result.times_s[i] << '\n';
    rows << "summary,median=" << result.median() << ";mean=" << result.mean()
         << ";p90=" << result.percentile(90.0) << '\n';
    write_file(fs::path(dir) / "results.csv", rows.str());

    std::ostringstream cdf;
    cdf.precision(17);
    cdf << "download_time_s,cumulative_probability\n";
    std::vector<double> sorted = result.times_s;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
        cdf << sorted[i] << ',' << double(i + 1) / double(sorted.size()) << '\n';
    write_file(fs::path(dir) / "cdf.csv", cdf.str());

    std::ostringstream manifest;
    manifest << "# replayable run manifest (tool version 1)\n";
    write_config(manifest, cfg);
    write_file(fs::path(dir) / "manifest.cfg", manifest.str());
}

inline void emit_convergence(const ConvergenceCurve& curve,
                             const ExperimentConfig& cfg, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ostringstream os;
    os.precision(17);
    os << "packets,mean_score";
    for (std::size_t r = 0; r < curve.per_run.size(); ++r) os << ",run" << r;
    os << '\n';
    for (std::size_t i = 0; i < curve.checkpoints.size(); ++i) {
        os << curve.checkpoints[i] << ',' << curve.mean_scores[i];
        for (const auto& run : curve.per_run) os << ',' << run[i];
        os << '\n';
    }
    write_file(fs::path(dir) / "convergence.csv", os.str());
    std::ostringstream manifest;
    manifest << "# replayable run manifest (tool version 1)\n";
    write_config(manifest, cfg);
    write_file(fs::path(dir) / "manifest.cfg", manifest.str());
}

inline void emit_stress(const StressResult& result, const ExperimentConfig& cfg,
                        const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ostringstream os;
    os.precision(17);
    os << "interval_s,score\n";
    for (std::size_t i = 0; i < result.intervals_s.size(); ++i)
        os << result.intervals_s[i] << ',' << result.scores[i] << '\n';
    write_file(fs::path(dir) / "stress.csv", os.str());
    std::ostringstream manifest;
    manifest << "# replayable run manifest (tool version 1)\n";
    write_config(manifest, cfg);
    write_file(fs::path(dir) / "manifest.cfg", manifest.str());
}

inline void emit_sweep(const std::vector<SweepPoint>& points, const std::string& axis,
                       const ExperimentConfig& cfg, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ostringstream os;
    os.precision(17);
    os << axis << ",metric\n";
    for (const auto& p : points) os << p.value << ',' << p.metric << '\n';
    write_file(fs::path(dir) / "sweep.csv", os.str());
    std::ostringstream manifest;
    manifest << "# replayable run manifest (tool version 1)\n";
    write_config(manifest, cfg);
    write_file(fs::path(dir) / "manifest.cfg", manifest.str());
}

} // namespace falconsim
