#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace falconsim {

// Read-only per-path snapshot handed to schedulers at one event boundary.
struct PathView {
    int path_id = 0;
    double cwnd = 0.0;      // packets
    int inflight = 0;       // packets
    double swnd_share = 0.0; // packets of connection window usable here
    double srtt_ms = 0.0;
    double rttvar_ms = 0.0;
    bool headroom = false;  // inflight < cwnd and connection window open
};

struct SchedulerView {
    std::vector<PathView> paths;
    double swnd = 0.0;           // packets
    int total_inflight = 0;
    double bytes_remaining = 0.0; // not yet sent
    double packet_bytes = 0.0;
    double now_s = 0.0;
};

// A scheduling decision: a path index, or Defer (send nothing now).
struct SchedulerDecision {
    static constexpr int kDefer = -1;
    int path_id = kDefer;

    static SchedulerDecision defer() { return {kDefer}; }
    static SchedulerDecision path(int p) { return {p}; }
    bool is_defer() const { return path_id == kDefer; }
};

// Feedback about one previously scheduled packet, delivered when its fate is
// known. Learning schedulers build their reward signal from this.
struct PacketFeedback {
    std::uint64_t seq = 0;
    int path_id = 0;
    bool acked = false;     // false -> declared lost
    double send_time_s = 0.0;
    double done_time_s = 0.0;
    double size_bytes = 0.0;
    double flight_bytes = 0.0;  // connection bytes delivered during flight
    double rtt_sample_ms = 0.0; // measured RTT for acked packets
};

class Scheduler {
public:
    virtual ~Scheduler() = default;
    virtual std::string name() const = 0;
    virtual SchedulerDecision select(const SchedulerView& view) = 0;
    // seq/path of a packet just emitted on our decision.
    virtual void on_sent(std::uint64_t /*seq*/, int /*path*/,
                         const SchedulerView& /*at_send*/) {}
    // Called once per packet when acked or declared lost; `now_view` is the
    // state snapshot at that moment.
    virtual void on_feedback(const PacketFeedback& /*fb*/,
                             const SchedulerView& /*now_view*/) {}
    // Transport-level reset between transfers. Learning state survives; only
    // per-transfer bookkeeping should clear.
    virtual void on_transfer_start() {}
};

inline bool any_headroom(const SchedulerView& v) {
    return std::any_of(v.paths.begin(), v.paths.end(),
                       [](const PathView& p) { return p.headroom; });
}

// Lowest-srtt path among those with headroom; ties by lowest path id.
class MinRttScheduler : public Scheduler {
public:
    std::string name() const override { return "minrtt"; }
    SchedulerDecision select(const SchedulerView& view) override {
        int best = -1;
        double best_rtt = std::numeric_limits<double>::infinity();
        for (const auto& p : view.paths) {
            if (!p.headroom) continue;
            if (p.srtt_ms < best_rtt) {
                best_rtt = p.srtt_ms;
                best = p.path_id;
            }
        }
        return best < 0 ? SchedulerDecision::defer() : SchedulerDecision::path(best);
    }
};

// Cyclic among paths with headroom.
class RoundRobinScheduler : public Scheduler {
public:
    std::string name() const override { return "rr"; }
    SchedulerDecision select(const SchedulerView& view) override {
        const int n = static_cast<int>(view.paths.size());
        for (int k = 1; k <= n; ++k) {
            const int idx = (last_ + k) % n;
            if (view.paths[static_cast<std::size_t>(idx)].headroom) {
                last_ = idx;
                return SchedulerDecision::path(view.paths[static_cast<std::size_t>(idx)].path_id);
            }
        }
        return SchedulerDecision::defer();
    }

private:
    int last_ = -1; // index of last used path slot
};

// Blocking-estimation scheduler: behaves as minRTT while the fast path has
// headroom; when only the slow path is open, estimates how many packets the
// fast path could carry during one slow-path RTT (including +1/RTT window
// growth) and defers if that alone covers the remaining data.
class BlestScheduler : public Scheduler {
public:
    explicit BlestScheduler(double delta = 1.0) : delta_(delta) {}
    std::string name() const override { return "blest"; }

    SchedulerDecision select(const SchedulerView& view) override {
        const PathView* fast = nullptr;
        for (const auto& p : view.paths)
            if (!fast || p.srtt_ms < fast->srtt_ms) fast = &p;
        if (!fast) return SchedulerDecision::defer();
        if (fast->headroom) {
            // minRTT behaviour, ties by id
            MinRttScheduler m;
            return m.select(view);
        }
        // slowest-but-open candidate (lowest srtt among open paths)
        const PathView* slow = nullptr;
        for (const auto& p : view.paths) {
            if (!p.headroom || p.path_id == fast->path_id) continue;
            if (!slow || p.srtt_ms < slow->srtt_ms) slow = &p;
        }
        if (!slow) return SchedulerDecision::defer();
        const double rtt_ratio = slow->srtt_ms / std::max(fast->srtt_ms, 1e-9);
        const double fast_capacity =
            fast->cwnd * rtt_ratio + rtt_ratio * (rtt_ratio - 1.0) / 2.0;
        const double remaining_pkts =
            std::ceil(view.bytes_remaining / std::max(view.packet_bytes, 1.0));
        if (delta_ * fast_capacity >= remaining_pkts)
            return SchedulerDecision::defer(); // slow-path send would block
        return SchedulerDecision::path(slow->path_id);
    }

private:
    double delta_;
};

} // namespace falconsim
