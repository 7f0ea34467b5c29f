#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "falconsim/bandit.hpp"
#include "falconsim/binio.hpp"
#include "falconsim/cpd.hpp"
#include "falconsim/dqn.hpp"
#include "falconsim/sched.hpp"

namespace falconsim {

struct BankError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Network-condition bucketing
// ---------------------------------------------------------------------------

struct PathCondition {
    double loss_pct = 0.0;      // packet loss rate in percent
    double rtt_mean_ms = 0.0;
    double rtt_var_pct = 0.0;   // RTT deviation / mean RTT, percent
};

struct NetworkCondition {
    std::vector<PathCondition> paths;
};

// Coarse bins, closed on the left:
//   loss     [0,1) [1,5) [5,100]   percent
//   mean RTT [0,50) [50,200) [200,inf)  ms
//   var rate [0,40) [40,80) [80,inf)   percent
inline int bin3(double v, double b1, double b2) {
    if (v < b1) return 0;
    if (v < b2) return 1;
    return 2;
}

inline int path_bucket(const PathCondition& c) {
    const int loss_bin = bin3(c.loss_pct, 1.0, 5.0);
    const int rtt_bin = bin3(c.rtt_mean_ms, 50.0, 200.0);
    const int var_bin = bin3(c.rtt_var_pct, 40.0, 80.0);
    return 9 * loss_bin + 3 * rtt_bin + var_bin;
}

// Combined index over paths: 27*b1 + b2 for two paths (729 buckets total).
inline int bucket_of(const NetworkCondition& c) {
    int idx = 0;
    for (const auto& p : c.paths) idx = idx * 27 + path_bucket(p);
    return idx;
}

constexpr int kBucketCount = 729;

// ---------------------------------------------------------------------------
// Condition estimation from transport observations
// ---------------------------------------------------------------------------

// Raw per-path observations over a window: one loss flag per packet fate and
// one RTT sample per acked packet.
struct ConditionWindow {
    struct PerPath {
        std::vector<int> loss_flags;
        std::vector<double> rtt_samples_ms;
        std::size_t packets() const { return loss_flags.size(); }
    };
    std::vector<PerPath> paths;

    void add(int path, bool lost, double rtt_ms) {
        auto& p = paths.at(static_cast<std::size_t>(path));
        p.loss_flags.push_back(lost ? 1 : 0);
        if (!lost) p.rtt_samples_ms.push_back(rtt_ms);
    }
};

// Per-path loss rate, mean RTT, and RTT variation rate over the window.
// Throws if any path carries fewer than `min_packets` observations.
inline NetworkCondition estimate_condition(const ConditionWindow& window,
                                           std::size_t min_packets) {
    NetworkCondition cond;
    for (const auto& p : window.paths) {
        if (p.packets() < min_packets)
            throw std::runtime_error("estimation pending: not enough samples");
        PathCondition c;
        int losses = 0;
        for (int f : p.loss_flags) losses += f;
        c.loss_pct = 100.0 * double(losses) / double(p.packets());
        double mean = 0.0;
        for (double r : p.rtt_samples_ms) mean += r;
        const std::size_t n = std::max<std::size_t>(p.rtt_samples_ms.size(), 1);
        mean /= double(n);
        double var = 0.0;
        for (double r : p.rtt_samples_ms) var += (r - mean) * (r - mean);
        var = p.rtt_samples_ms.size() > 1 ? var / double(p.rtt_samples_ms.size() - 1) : 0.0;
        c.rtt_mean_ms = mean > 0 ? mean : 1.0;
        c.rtt_var_pct = 100.0 * std::sqrt(var) / c.rtt_mean_ms;
        cond.paths.push_back(c);
    }
    return cond;
}

// ---------------------------------------------------------------------------
// Experience log
// ---------------------------------------------------------------------------

struct ExperienceRecord {
    double time_s = 0.0;
    NetworkCondition condition;
    int bucket = 0;
    Transition tr;
};

class ExperienceLog {
public:
    void append(ExperienceRecord rec) { records_.push_back(std::move(rec)); }
    const std::vector<ExperienceRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

    // CSV: time_s, per-path condition triples, state, action, reward,
    // next state, done. Header row included.
    void save_csv(std::ostream& os) const {
        if (records_.empty()) {
            os << "time_s\n";
            return;
        }
        const auto& first = records_.front();
        os << "time_s";
        for (std::size_t p = 0; p < first.condition.paths.size(); ++p)
            os << ",loss_pct" << p + 1 << ",rtt_ms" << p + 1 << ",rtt_var_pct" << p + 1;
        for (std::size_t i = 0; i < first.tr.s.size(); ++i) os << ",s" << i;
        os << ",action,reward";
        for (std::size_t i = 0; i < first.tr.s_next.size(); ++i) os << ",sn" << i;
        os << ",done\n";
        os.precision(17);
        for (const auto& r : records_) {
            os << r.time_s;
            for (const auto& p : r.condition.paths)
                os << ',' << p.loss_pct << ',' << p.rtt_mean_ms << ',' << p.rtt_var_pct;
            for (double v : r.tr.s) os << ',' << v;
            os << ',' << r.tr.a << ',' << r.tr.r;
            for (double v : r.tr.s_next) os << ',' << v;
            os << ',' << (r.tr.done ? 1 : 0) << '\n';
        }
    }

    static ExperienceLog load_csv(std::istream& is, int n_paths, int state_dim) {
        ExperienceLog log;
        std::string line;
        if (!std::getline(is, line)) return log; // header
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            std::vector<double> vals;
            std::string cell;
            while (std::getline(row, cell, ',')) vals.push_back(std::stod(cell));
            const std::size_t want = 1 + 3 * static_cast<std::size_t>(n_paths) +
                                     2 * static_cast<std::size_t>(state_dim) + 3;
            if (vals.size() != want)
                throw std::runtime_error("experience row has wrong column count");
            ExperienceRecord rec;
            std::size_t i = 0;
            rec.time_s = vals[i++];
            for (int p = 0; p < n_paths; ++p) {
                PathCondition c;
                c.loss_pct = vals[i++];
                c.rtt_mean_ms = vals[i++];
                c.rtt_var_pct = vals[i++];
                rec.condition.paths.push_back(c);
            }
            for (int k = 0; k < state_dim; ++k) rec.tr.s.push_back(vals[i++]);
            rec.tr.a = static_cast<int>(vals[i++]);
            rec.tr.r = vals[i++];
            for (int k = 0; k < state_dim; ++k) rec.tr.s_next.push_back(vals[i++]);
            rec.tr.done = vals[i++] != 0;
            rec.bucket = bucket_of(rec.condition);
            log.append(std::move(rec));
        }
        return log;
    }

private:
    std::vector<ExperienceRecord> records_;
};

// ---------------------------------------------------------------------------
// Meta-model bank
// ---------------------------------------------------------------------------

struct MetaConfig {
    double lambda = 0.25;       // meta interpolation rate, (0,1]
    int k_steps = 16;           // few-shot gradient steps
    int meta_iters = 50;        // meta iterations per bucket per tick
    double tolerance = 1e-4;    // stop when max |delta theta| falls below
    double eps_large = 0.3;     // exploration while a bucket has no meta-model
    double eps_small = 0.1;     // exploration thereafter
};

struct MetaBankEntry {
    std::vector<double> params;
    std::uint64_t update_count = 0;
    double last_update_s = 0.0;
};

class MetaBank {
public:
    MetaBank(std::vector<int> net_sizes, MetaConfig cfg, std::uint64_t seed)
        : sizes_(std::move(net_sizes)), cfg_(cfg), seed_(seed) {}

    const std::vector<int>& net_sizes() const { return sizes_; }
    const MetaConfig& meta_config() const { return cfg_; }
    MetaConfig& meta_config() { return cfg_; }

    bool has(int bucket) const { return entries_.count(bucket) > 0; }
    std::size_t trained_count() const { return entries_.size(); }
    const std::map<int, MetaBankEntry>& entries() const { return entries_; }

    const MetaBankEntry* entry(int bucket) const {
        auto it = entries_.find(bucket);
        return it == entries_.end() ? nullptr : &it->second;
    }

    // Starting parameters for a bucket: its meta-model, or a seeded random
    // init for never-trained buckets.
    std::vector<double> initial_params(int bucket) const {
        if (const auto* e = entry(bucket)) return e->params;
        Rng rng(derive_seed(seed_, "bucket-init:" + std::to_string(bucket)));
        return Mlp(sizes_, rng).params();
    }

    void store(int bucket, std::vector<double> params, double now_s) {
        if (params.size() != Mlp::param_count(sizes_))
            throw BankError("parameter layout mismatch for bucket entry");
        auto& e = entries_[bucket];
        e.params = std::move(params);
        e.update_count++;
        e.last_update_s = now_s;
    }

    static constexpr std::uint16_t kFormatVersion = 1;

    void save(std::ostream& os) const {
        os.write("FBNK", 4);
        binio::write_u16(os, kFormatVersion);
        binio::write_u32(os, static_cast<std::uint32_t>(sizes_.size()));
        for (int s : sizes_) binio::write_u32(os, static_cast<std::uint32_t>(s));
        binio::write_u32(os, static_cast<std::uint32_t>(entries_.size()));
        for (const auto& [bucket, e] : entries_) {
            binio::write_u32(os, static_cast<std::uint32_t>(bucket));
            binio::write_u64(os, e.update_count);
            binio::write_f64(os, e.last_update_s);
            for (double p : e.params) binio::write_f64(os, p);
        }
        if (!os) throw BankError("bank write failed");
    }

    static MetaBank load(std::istream& is, MetaConfig cfg = {},
                         std::uint64_t seed = 0) {
        char magic[4];
        is.read(magic, 4);
        if (!is || std::memcmp(magic, "FBNK", 4) != 0)
            throw BankError("bad bank file: missing FBNK magic");
        if (binio::read_u16(is) != kFormatVersion)
            throw BankError("unsupported bank format version");
        const std::uint32_t nl = binio::read_u32(is);
        if (!is || nl < 2 || nl > 64) throw BankError("corrupt bank: layer count");
        std::vector<int> sizes(nl);
        for (auto& s : sizes) {
            s = static_cast<int>(binio::read_u32(is));
            if (!is || s <= 0) throw BankError("corrupt bank: layer size");
        }
        MetaBank bank(sizes, cfg, seed);
        const std::uint32_t count = binio::read_u32(is);
        if (!is || count > kBucketCount) throw BankError("corrupt bank: entry count");
        const std::size_t nparams = Mlp::param_count(sizes);
        for (std::uint32_t i = 0; i < count; ++i) {
            const int bucket = static_cast<int>(binio::read_u32(is));
            MetaBankEntry e;
            e.update_count = binio::read_u64(is);
            e.last_update_s = binio::read_f64(is);
            e.params.resize(nparams);
            for (auto& p : e.params) p = binio::read_f64(is);
            if (!is) throw BankError("corrupt bank: truncated entry");
            if (bucket < 0 || bucket >= kBucketCount)
                throw BankError("corrupt bank: bucket id out of range");
            bank.entries_[bucket] = std::move(e);
        }
        return bank;
    }

private:
    std::vector<int> sizes_;
    MetaConfig cfg_;
    std::uint64_t seed_;
    std::map<int, MetaBankEntry> entries_;
};

// ---------------------------------------------------------------------------
// Meta-learning operations
// ---------------------------------------------------------------------------

struct AdaptationStats {
    int gradient_steps = 0;
    int samples_consumed = 0;
};

// K mini-batch TD steps from `start_params` on `data`; returns the adapted
// parameter vector. `stats` (optional) records the consumed budget.
inline std::vector<double> k_step_adapt(const std::vector<int>& sizes,
                                        const std::vector<double>& start_params,
                                        const std::vector<Transition>& data,
                                        const AgentConfig& agent_cfg, int k_steps,
                                        std::uint64_t seed,
                                        AdaptationStats* stats = nullptr) {
    if (data.size() < static_cast<std::size_t>(agent_cfg.batch))
        throw std::runtime_error("adaptation pending: not enough recent transitions");
    const int state_dim = sizes.front();
    const int n_actions = sizes.back();
    AgentConfig cfg = agent_cfg;
    cfg.replay_capacity = std::max<std::size_t>(data.size(), cfg.replay_capacity);
    DqnAgent agent(state_dim, n_actions, cfg, seed);
    agent.set_online_params(start_params);
    agent.sync_target();
    for (const auto& t : data) agent.observe(t);
    Rng rng(derive_seed(seed, "adapt"));
    int steps = 0;
    for (int k = 0; k < k_steps; ++k) {
        if (agent.train_step(rng)) ++steps;
    }
    if (stats) {
        stats->gradient_steps = steps;
        stats->samples_consumed = steps * cfg.batch;
    }
    return agent.online_net().params();
}

// Reptile-style offline update: for each bucket with logged experience,
// repeatedly pick a condition-episode, run K adaptation steps from theta to
// obtain W, and move theta toward W by lambda.
class MetaLearner {
public:
    MetaLearner(AgentConfig agent_cfg, std::uint64_t seed)
        : agent_cfg_(agent_cfg), seed_(seed) {}

    // Episodes = maximal runs of consecutive records sharing a bucket.
    static std::map<int, std::vector<std::vector<Transition>>>
    partition_episodes(const std::vector<ExperienceRecord>& records) {
        std::map<int, std::vector<std::vector<Transition>>> by_bucket;
        int prev_bucket = -1;
        std::vector<Transition>* current = nullptr;
        for (const auto& r : records) {
            if (r.bucket != prev_bucket || !current) {
                by_bucket[r.bucket].emplace_back();
                current = &by_bucket[r.bucket].back();
                prev_bucket = r.bucket;
            }
            current->push_back(r.tr);
        }
        return by_bucket;
    }

    void meta_update(MetaBank& bank, const std::vector<ExperienceRecord>& records,
                     double now_s) {
        meta_update_episodes(bank, partition_episodes(records), now_s);
    }

    void meta_update_episodes(
        MetaBank& bank,
        const std::map<int, std::vector<std::vector<Transition>>>& episodes,
        double now_s) {
        const MetaConfig& mc = bank.meta_config();
        for (const auto& [bucket, eps] : episodes) {
            std::vector<const std::vector<Transition>*> usable;
            for (const auto& e : eps)
                if (e.size() >= static_cast<std::size_t>(agent_cfg_.batch))
                    usable.push_back(&e);
            if (usable.empty()) continue;
            std::vector<double> theta = bank.initial_params(bucket);
            Rng rng(derive_seed(seed_, "meta:" + std::to_string(bucket) + ":" +
                                           std::to_string(++tick_)));
            for (int it = 0; it < mc.meta_iters; ++it) {
                const auto& task = *usable[rng.uniform_int(usable.size())];
                const auto w = k_step_adapt(bank.net_sizes(), theta, task,
                                            agent_cfg_, mc.k_steps,
                                            rng.next_u64());
                double max_delta = 0.0;
                for (std::size_t i = 0; i < theta.size(); ++i) {
                    const double d = mc.lambda * (w[i] - theta[i]);
                    theta[i] += d;
                    max_delta = std::max(max_delta, std::abs(d));
                }
                if (max_delta < mc.tolerance) break;
            }
            bank.store(bucket, std::move(theta), now_s);
        }
    }

private:
    AgentConfig agent_cfg_;
    std::uint64_t seed_;
    std::uint64_t tick_ = 0;
};

// ---------------------------------------------------------------------------
// The learning schedulers
// ---------------------------------------------------------------------------

enum class LearnerMode {
    Falcon, // change detection + localization + few-shot adaptation
    DqnOn,  // continuous online training, never abandons its model
    DqnOff, // frozen pre-trained model
};

struct FalconConfig {
    AgentConfig agent;           // epsilon here = acting epsilon (eps_small)
    MetaConfig meta;
    CpdConfig cpd_rtt;
    CpdConfig cpd_loss;
    std::size_t w_min = 100;     // localization packets per path
    double max_bandwidth_bps = 14e6; // reward normalization cap
    int train_period = 32;       // DQN-On: one train step per N transitions
    int n_paths = 2;

    FalconConfig() {
        cpd_loss.warmup = 10;
        // loss-count observations are near-constant at low loss rates; keep a
        // sane predictive variance floor so a single loss is not a trigger
        cpd_loss.min_beta0 = 0.5;
    }

    int state_dim() const { return 4 * n_paths; }
    std::vector<int> net_sizes() const {
        std::vector<int> s{state_dim()};
        for (int h : agent.hidden) s.push_back(h);
        s.push_back(n_paths);
        return s;
    }
};

// FALCON multipath scheduler agent. Also serves as the DQN-On and DQN-Off
// baselines via `mode`.
class FalconAgent : public Scheduler {
public:
    FalconAgent(LearnerMode mode, FalconConfig cfg, std::uint64_t seed)
        : mode_(mode),
          cfg_(cfg),
          seed_(seed),
          rng_(derive_seed(seed, "agent")),
          trainer_(cfg.state_dim(), cfg.n_paths, cfg.agent, derive_seed(seed, "net")),
          bank_(cfg.net_sizes(), cfg.meta, derive_seed(seed, "bank")),
          policy_(trainer_.online_net()) {
        for (int p = 0; p < cfg_.n_paths; ++p) {
            rtt_detectors_.emplace_back(cfg_.cpd_rtt);
            loss_detectors_.emplace_back(cfg_.cpd_loss);
            loss_flag_buf_.emplace_back();
        }
        rolling_.paths.resize(static_cast<std::size_t>(cfg_.n_paths));
        if (mode_ == LearnerMode::Falcon) begin_adaptation_epoch();
    }

    std::string name() const override {
        switch (mode_) {
            case LearnerMode::Falcon: return "falcon";
            case LearnerMode::DqnOn: return "dqn-on";
            default: return "dqn-off";
        }
    }

    LearnerMode mode() const { return mode_; }
    FalconConfig& config() { return cfg_; }
    MetaBank& bank() { return bank_; }
    const MetaBank& bank() const { return bank_; }
    void set_bank(MetaBank bank) { bank_ = std::move(bank); }
    DqnAgent& trainer() { return trainer_; }
    ExperienceLog& experience() { return log_; }
    const ExperienceLog& experience() const { return log_; }

    const Mlp& policy() const { return policy_; }
    void set_policy(const Mlp& net) { policy_ = net; }
    std::uint64_t policy_swaps() const { return policy_swaps_; }
    // Bucket chosen by the last completed localization, if any.
    std::optional<int> localized_bucket() const { return localized_bucket_; }
    const AdaptationStats& last_adaptation() const { return last_adaptation_; }
    std::uint64_t change_triggers() const { return change_triggers_; }

    // Offline loop entry point, invoked by the harness at T_upd boundaries.
    // Consumes the experience accumulated since the previous tick.
    void offline_loop_tick(double now_s) {
        if (log_consumed_ >= log_.size()) return;
        std::vector<ExperienceRecord> fresh(log_.records().begin() +
                                                static_cast<std::ptrdiff_t>(log_consumed_),
                                            log_.records().end());
        log_consumed_ = log_.size();
        MetaLearner learner(cfg_.agent, derive_seed(seed_, "meta-learner"));
        learner.meta_update(bank_, fresh, now_s);
    }

    SchedulerDecision select(const SchedulerView& view) override {
        const StateVec s = state_from_view(view);
        int a;
        if (mode_ == LearnerMode::DqnOff) {
            a = DqnAgent::argmax(policy_.forward(s));
        } else if (rng_.uniform() < cfg_.agent.epsilon) {
            a = static_cast<int>(rng_.uniform_int(static_cast<std::uint64_t>(cfg_.n_paths)));
        } else {
            a = DqnAgent::argmax(policy_.forward(s));
        }
        // a congested choice means "wait": congestion is inherited from the
        // state rather than masked out of the action set. The wasted
        // opportunity is itself experience: a zero-reward self-transition,
        // without which congested picks would be invisible to training.
        if (!view.paths[static_cast<std::size_t>(a)].headroom) {
            if (mode_ != LearnerMode::DqnOff) {
                Transition tr;
                tr.s = s;
                tr.a = a;
                tr.r = 0.0;
                tr.s_next = s;
                tr.done = false;
                ingest(tr, view.now_s, nullptr);
            }
            return SchedulerDecision::defer();
        }
        return SchedulerDecision::path(a);
    }

    void on_sent(std::uint64_t seq, int path, const SchedulerView& at_send) override {
        pending_[seq] = state_from_view(at_send);
        (void)path;
    }

    void on_feedback(const PacketFeedback& fb, const SchedulerView& now_view) override {
        auto it = pending_.find(fb.seq);
        if (it == pending_.end()) return;
        Transition tr;
        tr.s = std::move(it->second);
        pending_.erase(it);
        tr.a = fb.path_id;
        tr.r = packet_reward(fb, cfg_.max_bandwidth_bps);
        tr.s_next = state_from_view(now_view);
        tr.done = false;

        observe_signals(fb);
        ingest(tr, fb.done_time_s, &fb);
    }

    // Force-disable change detection (degenerates FALCON to DQN-On semantics
    // when combined with continuous training).
    void disable_cpd() { cpd_enabled_ = false; }

    // Acting exploration rate (also mirrored into the trainer's config).
    void set_epsilon(double e) {
        cfg_.agent.epsilon = e;
        trainer_.config().epsilon = e;
    }

private:
    // Common path for real packet transitions (fb set) and zero-reward defer
    // transitions (fb null).
    void ingest(const Transition& tr, double time_s, const PacketFeedback* fb) {
        log_transition(time_s, tr);
        switch (mode_) {
            case LearnerMode::DqnOff:
                break;
            case LearnerMode::DqnOn: {
                trainer_.observe(tr);
                if (++since_train_ >= cfg_.train_period) {
                    since_train_ = 0;
                    trainer_.train_step(rng_);
                    policy_ = trainer_.online_net(); // continuous, no abandoning
                }
                break;
            }
            case LearnerMode::Falcon: {
                if (adapting_) {
                    recent_.push_back(tr);
                    advance_adaptation(fb);
                } else if (change_detected_) {
                    begin_adaptation_epoch();
                    recent_.push_back(tr);
                }
                break;
            }
        }
    }

    void observe_signals(const PacketFeedback& fb) {
        auto& roll = rolling_.paths[static_cast<std::size_t>(fb.path_id)];
        roll.loss_flags.push_back(fb.acked ? 0 : 1);
        if (fb.acked) roll.rtt_samples_ms.push_back(fb.rtt_sample_ms);
        const std::size_t cap = 4 * cfg_.w_min;
        if (roll.loss_flags.size() > cap) roll.loss_flags.erase(roll.loss_flags.begin());
        if (roll.rtt_samples_ms.size() > cap)
            roll.rtt_samples_ms.erase(roll.rtt_samples_ms.begin());

        if (mode_ != LearnerMode::Falcon || !cpd_enabled_) return;

        const auto idx = static_cast<std::size_t>(fb.path_id);
        bool trigger = false;
        if (fb.acked) {
            rtt_detectors_[idx].update(fb.rtt_sample_ms);
            if (rtt_detectors_[idx].detect()) trigger = true;
        }
        auto& flags = loss_flag_buf_[idx];
        flags.push_back(fb.acked ? 0 : 1);
        if (static_cast<int>(flags.size()) >= cfg_.cpd_loss.group_size) {
            int count = 0;
            for (int f : flags) count += f;
            flags.clear();
            loss_detectors_[idx].update(double(count));
            if (loss_detectors_[idx].detect()) trigger = true;
        }
        if (trigger && !adapting_) {
            ++change_triggers_;
            change_detected_ = true;
        }
    }

    void begin_adaptation_epoch() {
        adapting_ = true;
        change_detected_ = false;
        localized_bucket_.reset();
        recent_.clear();
        localization_ = ConditionWindow{};
        localization_.paths.resize(static_cast<std::size_t>(cfg_.n_paths));
    }

    void advance_adaptation(const PacketFeedback* fb) {
        if (fb) localization_.add(fb->path_id, !fb->acked, fb->rtt_sample_ms);
        if (!localized_bucket_) {
            for (const auto& p : localization_.paths)
                if (p.packets() < cfg_.w_min) return;
            localized_bucket_ = bucket_of(estimate_condition(localization_, cfg_.w_min));
        }
        const std::size_t budget =
            static_cast<std::size_t>(cfg_.meta.k_steps) *
            static_cast<std::size_t>(cfg_.agent.batch);
        if (recent_.size() < std::max<std::size_t>(
                budget, static_cast<std::size_t>(cfg_.agent.batch)))
            return;
        // few-shot adaptation, then an atomic policy swap; the bank's own
        // entry is never written from the online loop
        AdaptationStats stats;
        const auto params = k_step_adapt(
            cfg_.net_sizes(), bank_.initial_params(*localized_bucket_), recent_,
            cfg_.agent, cfg_.meta.k_steps,
            derive_seed(seed_, "fewshot:" + std::to_string(policy_swaps_)), &stats);
        Mlp adapted(policy_);
        adapted.set_params(params);
        policy_ = std::move(adapted);
        ++policy_swaps_;
        last_adaptation_ = stats;
        adapting_ = false;
        recent_.clear();
    }

    void log_transition(double time_s, const Transition& tr) {
        ExperienceRecord rec;
        rec.time_s = time_s;
        rec.tr = tr;
        rec.condition = current_condition_estimate();
        rec.bucket = bucket_of(rec.condition);
        log_.append(std::move(rec));
    }

    NetworkCondition current_condition_estimate() const {
        NetworkCondition cond;
        for (const auto& p : rolling_.paths) {
            PathCondition c;
            if (p.packets() >= 10) {
                int losses = 0;
                for (int f : p.loss_flags) losses += f;
                c.loss_pct = 100.0 * double(losses) / double(p.packets());
                double mean = 0.0;
                for (double r : p.rtt_samples_ms) mean += r;
                const std::size_t n = std::max<std::size_t>(p.rtt_samples_ms.size(), 1);
                mean /= double(n);
                double var = 0.0;
                for (double r : p.rtt_samples_ms) var += (r - mean) * (r - mean);
                var = p.rtt_samples_ms.size() > 1
                          ? var / double(p.rtt_samples_ms.size() - 1)
                          : 0.0;
                c.rtt_mean_ms = mean > 0 ? mean : 1.0;
                c.rtt_var_pct = 100.0 * std::sqrt(var) / c.rtt_mean_ms;
            } else {
                c.rtt_mean_ms = 1.0;
            }
            cond.paths.push_back(c);
        }
        return cond;
    }

    LearnerMode mode_;
    FalconConfig cfg_;
    std::uint64_t seed_;
    Rng rng_;
    DqnAgent trainer_;
    MetaBank bank_;
    Mlp policy_;
    ExperienceLog log_;
    std::size_t log_consumed_ = 0;

    std::unordered_map<std::uint64_t, StateVec> pending_;
    std::vector<RunLengthPosterior> rtt_detectors_;
    std::vector<RunLengthPosterior> loss_detectors_;
    std::vector<std::vector<int>> loss_flag_buf_;
    ConditionWindow rolling_;
    bool cpd_enabled_ = true;

    bool adapting_ = false;
    bool change_detected_ = false;
    std::optional<int> localized_bucket_;
    ConditionWindow localization_;
    std::vector<Transition> recent_;
    int since_train_ = 0;
    std::uint64_t policy_swaps_ = 0;
    std::uint64_t change_triggers_ = 0;
    AdaptationStats last_adaptation_;
};

// LinUCB contextual-bandit scheduler (M-Peekaboo-like surrogate): one arm per
// path over the same state features as the DQN, with a bias term; arms reset
// to fresh on a change trigger.
class LinUcbScheduler : public Scheduler {
public:
    LinUcbScheduler(FalconConfig cfg, std::uint64_t seed, double alpha = 1.0)
        : cfg_(cfg), alpha_(alpha), rng_(derive_seed(seed, "bandit")) {
        const int d = cfg_.state_dim() + 1;
        for (int p = 0; p < cfg_.n_paths; ++p) {
            arms_.emplace_back(d);
            rtt_detectors_.emplace_back(cfg_.cpd_rtt);
            loss_flag_buf_.emplace_back();
            loss_detectors_.emplace_back(cfg_.cpd_loss);
        }
    }

    std::string name() const override { return "bandit"; }

    SchedulerDecision select(const SchedulerView& view) override {
        const auto x = context(view);
        const int a = ucb_select(arms_, x, alpha_);
        if (!view.paths[static_cast<std::size_t>(a)].headroom) {
            // a congested pick earns nothing; teach the arm so
            arms_[static_cast<std::size_t>(a)].update(x, 0.0);
            return SchedulerDecision::defer();
        }
        return SchedulerDecision::path(a);
    }

    void on_sent(std::uint64_t seq, int /*path*/, const SchedulerView& at_send) override {
        pending_[seq] = context(at_send);
    }

    void on_feedback(const PacketFeedback& fb, const SchedulerView&) override {
        auto it = pending_.find(fb.seq);
        if (it == pending_.end()) return;
        const auto x = std::move(it->second);
        pending_.erase(it);
        arms_[static_cast<std::size_t>(fb.path_id)].update(
            x, packet_reward(fb, cfg_.max_bandwidth_bps));

        const auto idx = static_cast<std::size_t>(fb.path_id);
        bool trigger = false;
        if (fb.acked) {
            rtt_detectors_[idx].update(fb.rtt_sample_ms);
            if (rtt_detectors_[idx].detect()) trigger = true;
        }
        auto& flags = loss_flag_buf_[idx];
        flags.push_back(fb.acked ? 0 : 1);
        if (static_cast<int>(flags.size()) >= cfg_.cpd_loss.group_size) {
            int count = 0;
            for (int f : flags) count += f;
            flags.clear();
            loss_detectors_[idx].update(double(count));
            if (loss_detectors_[idx].detect()) trigger = true;
        }
        if (trigger) reset_arms();
    }

    void reset_arms() {
        const int d = cfg_.state_dim() + 1;
        for (auto& arm : arms_) arm = LinUcbArm(d);
    }

    const std::vector<LinUcbArm>& arms() const { return arms_; }

private:
    std::vector<double> context(const SchedulerView& view) const {
        auto x = state_from_view(view);
        x.push_back(1.0); // bias feature
        return x;
    }

    FalconConfig cfg_;
    double alpha_;
    Rng rng_;
    std::vector<LinUcbArm> arms_;
    std::unordered_map<std::uint64_t, std::vector<double>> pending_;
    std::vector<RunLengthPosterior> rtt_detectors_;
    std::vector<RunLengthPosterior> loss_detectors_;
    std::vector<std::vector<int>> loss_flag_buf_;
};

} // namespace falconsim
