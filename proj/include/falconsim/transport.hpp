#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "falconsim/netsim.hpp"
#include "falconsim/sched.hpp"

namespace falconsim {

struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StallError : TransportError {
    using TransportError::TransportError;
};
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

struct TransportConfig {
    double packet_bytes = 1250.0;
    double swnd_packets = 1000.0;
    double initial_cwnd = 10.0;
    double initial_srtt_ms = 50.0; // used for state features before first ACK
    int dupack_threshold = 3;
    double min_rto_ms = 200.0;
    double stall_timeout_s = 30.0;
};

// OLIA bookkeeping: l1 = bytes acked since the last loss, l2 = bytes acked
// between the last two losses.
struct OliaVars {
    double l1 = 0.0;
    double l2 = 0.0;
};

struct PathState {
    int id = 0;
    double cwnd = 10.0;   // packets
    int inflight = 0;
    double srtt_ms = 0.0; // 0 = no sample yet
    double rttvar_ms = 0.0;
    std::uint64_t loss_events = 0;
    double acked_bytes = 0.0;
    OliaVars olia;
    bool slow_start = true;
    double ssthresh = std::numeric_limits<double>::infinity();
};

struct PacketRecord {
    std::uint64_t seq = 0;
    std::uint64_t chunk = 0; // identity of the payload bytes
    int path = 0;
    double send_time = 0.0;
    double size = 0.0;
    double delivered_at_send = 0.0; // connection bytes delivered when sent
    int dupacks = 0;
    bool acked = false;
    bool lost = false;
};

// One multipath connection over the emulated paths. Owns the event loop,
// drives the scheduler, and implements OLIA congestion avoidance with
// dupack/RTO loss recovery.
class Connection {
public:
    Connection(std::vector<PathTrace> traces, TransportConfig cfg,
               std::uint64_t seed)
        : traces_(std::move(traces)),
          cfg_(cfg),
          link_(static_cast<int>(traces_.size()), seed) {
        reset_transport();
    }

    const TransportConfig& config() const { return cfg_; }
    double now() const { return abs_now(); }
    double bytes_delivered() const { return bytes_delivered_; }
    std::uint64_t total_packets_sent() const { return packets_sent_; }
    std::uint64_t total_transfers() const { return transfers_done_; }
    int path_count() const { return static_cast<int>(traces_.size()); }
    const PathState& path_state(int p) const { return paths_[static_cast<std::size_t>(p)]; }

    // Transport layer state is reset before each request; the simulated clock
    // and the scheduler's learned state persist across transfers.
    double transfer(double size_bytes, Scheduler& scheduler) {
        begin_transfer(size_bytes, scheduler);
        pump(nullptr);
        return end_transfer();
    }

    // Start a transfer without driving it to completion; pump() advances it.
    void begin_transfer(double size_bytes, Scheduler& scheduler) {
        if (!(size_bytes > 0)) throw TransportError("transfer size must be > 0");
        reset_transport();
        scheduler.on_transfer_start();
        sched_ = &scheduler;
        transfer_bytes_ = size_bytes;
        bytes_unsent_ = size_bytes;
        start_time_ = loop_.now();
        last_progress_ = start_time_;
        try_send();
    }

    // Process events until the transfer completes or `pause` returns true.
    // Returns true once complete.
    bool pump(const std::function<bool()>& pause) {
        loop_.run_until([this](const SimEvent& ev) { dispatch(ev); },
                        [&] { return complete() || (pause && pause()); });
        return complete();
    }

    double end_transfer() {
        sched_ = nullptr;
        if (!complete())
            throw StallError("transfer stalled at t=" + std::to_string(loop_.now()));
        ++transfers_done_;
        return loop_.now() - start_time_;
    }

    // Abandon the in-progress transfer (used by fixed-duration runs); returns
    // the bytes delivered so far.
    double abort_transfer() {
        sched_ = nullptr;
        return bytes_delivered_;
    }

    // Continuous-backlog run for a fixed simulated duration; returns the
    // bytes delivered within the window.
    double run_for(double duration_s, Scheduler& scheduler) {
        begin_transfer(1e15, scheduler); // effectively unbounded backlog
        const double deadline = loop_.now() + duration_s;
        pump([&] { return loop_.now() >= deadline; });
        return abort_transfer();
    }

    bool complete() const {
        return transfer_bytes_ > 0 && bytes_delivered_ >= transfer_bytes_ - 1e-9;
    }

    SchedulerView make_view() const {
        SchedulerView v;
        v.swnd = cfg_.swnd_packets;
        v.packet_bytes = cfg_.packet_bytes;
        v.bytes_remaining = bytes_unsent_;
        v.now_s = loop_.now();
        int total = 0;
        for (const auto& p : paths_) total += p.inflight;
        v.total_inflight = total;
        for (const auto& p : paths_) {
            PathView pv;
            pv.path_id = p.id;
            pv.cwnd = p.cwnd;
            pv.inflight = p.inflight;
            pv.swnd_share = cfg_.swnd_packets / double(paths_.size());
            pv.srtt_ms = p.srtt_ms > 0 ? p.srtt_ms : cfg_.initial_srtt_ms;
            pv.rttvar_ms = p.rttvar_ms;
            pv.headroom = p.inflight < std::floor(p.cwnd) && total < cfg_.swnd_packets;
            v.paths.push_back(pv);
        }
        return v;
    }

    // Exposed for tests that drive ACK/loss handling directly.
    void on_ack_direct(int path, double rtt_sample_ms, double bytes) {
        apply_ack_cc(paths_[static_cast<std::size_t>(path)], rtt_sample_ms, bytes);
    }
    void on_loss_direct(int path) {
        apply_loss_cc(paths_[static_cast<std::size_t>(path)]);
    }

private:
    void reset_transport() {
        loop_like_reset();
        paths_.clear();
        for (std::size_t p = 0; p < traces_.size(); ++p) {
            PathState ps;
            ps.id = static_cast<int>(p);
            ps.cwnd = cfg_.initial_cwnd;
            paths_.push_back(ps);
        }
        unacked_.clear();
        outstanding_.assign(traces_.size(), {});
        last_ack_time_.assign(traces_.size(), 0.0);
        retransmit_.clear();
        delivered_.clear();
        next_chunk_ = 0;
        bytes_unsent_ = 0.0;
        bytes_delivered_ = 0.0;
        transfer_bytes_ = 0.0;
    }

    void loop_like_reset() {
        // Drain stale events (old timers) but keep the clock monotonic: a new
        // loop continues from the old time.
        const double t = loop_.now();
        loop_.clear();
        if (t > 0) {
            // re-anchor by scheduling nothing; SimLoop::clear resets now to 0,
            // so track an offset instead.
            offset_ += t;
        }
        link_.reset();
    }

    double abs_now() const { return offset_ + loop_.now(); }

    void dispatch(const SimEvent& ev) {
        switch (ev.kind) {
            case EventKind::PacketArrival: {
                // data reached the receiver; ACK returns after the other half
                // of the sampled RTT on the same path. ACKs do not overtake
                // one another (the return path is FIFO too).
                SimEvent ack = ev;
                ack.kind = EventKind::AckArrival;
                double& last = last_ack_time_[static_cast<std::size_t>(ev.path_id)];
                ack.fire_time =
                    std::max(ev.fire_time + ev.rtt_sample_ms / 2.0 / 1000.0, last);
                last = ack.fire_time;
                loop_.schedule(ack);
                break;
            }
            case EventKind::AckArrival:
                handle_ack(ev);
                break;
            case EventKind::PacketLost:
                // the drop itself is invisible to the sender; recovery happens
                // via duplicate ACKs or the retransmission timer
                ++modeled_drops_;
                break;
            case EventKind::TimerExpiry:
                handle_timer(ev);
                break;
            case EventKind::TraceSegmentChange:
                break;
        }
        check_stall();
    }

    void handle_ack(const SimEvent& ev) {
        auto it = unacked_.find(ev.seq);
        if (it == unacked_.end() || it->second.acked) return;
        PacketRecord& rec = it->second;
        deliver_chunk(rec.chunk, rec.size);
        if (rec.lost) {
            // spurious loss declaration; the data still made it. The chunk is
            // delivered above, congestion state is left alone.
            rec.acked = true;
            try_send();
            return;
        }
        rec.acked = true;
        PathState& ps = paths_[static_cast<std::size_t>(rec.path)];
        ps.inflight--;
        const double rtt_ms = (loop_.now() - rec.send_time) * 1000.0;
        apply_ack_cc(ps, rtt_ms, rec.size);
        remove_outstanding(rec.path, rec.seq);
        bump_dupacks(rec.path, rec.seq);
        notify_feedback(rec, true, rtt_ms);
        last_progress_ = loop_.now();
        try_send();
    }

    void handle_timer(const SimEvent& ev) {
        auto it = unacked_.find(ev.seq);
        if (it == unacked_.end() || it->second.acked || it->second.lost) return;
        declare_loss(it->second);
        try_send();
    }

    // EWMA per RFC 6298 (alpha=1/8, beta=1/4) + OLIA coupled increase.
    void apply_ack_cc(PathState& ps, double rtt_ms, double bytes) {
        if (ps.srtt_ms <= 0) {
            ps.srtt_ms = rtt_ms;
            ps.rttvar_ms = rtt_ms / 2.0;
        } else {
            ps.rttvar_ms = 0.75 * ps.rttvar_ms + 0.25 * std::abs(ps.srtt_ms - rtt_ms);
            ps.srtt_ms = 0.875 * ps.srtt_ms + 0.125 * rtt_ms;
        }
        ps.acked_bytes += bytes;
        ps.olia.l1 += bytes;
        if (ps.slow_start) {
            ps.cwnd += 1.0;
            if (ps.cwnd >= ps.ssthresh) ps.slow_start = false;
            return;
        }
        ps.cwnd += olia_increase(ps);
    }

    // OLIA: per ACK on path r,
    //   dw_r = (w_r/rtt_r^2) / (sum_p w_p/rtt_p)^2 + alpha_r / w_r
    // with alpha built from the best-path set B (best inter-loss quality but
    // not maximal window) and the max-window set M.
    double olia_increase(const PathState& r) const {
        const int n = static_cast<int>(paths_.size());
        double sum = 0.0;
        double max_w = 0.0;
        double best_q = -1.0;
        for (const auto& p : paths_) {
            const double rtt_s = effective_rtt_s(p);
            sum += p.cwnd / rtt_s;
            max_w = std::max(max_w, p.cwnd);
            best_q = std::max(best_q, olia_quality(p));
        }
        std::vector<int> B, M;
        for (const auto& p : paths_) {
            const bool is_best = olia_quality(p) >= best_q * (1.0 - 1e-12);
            const bool is_max = p.cwnd >= max_w * (1.0 - 1e-12);
            if (is_max) M.push_back(p.id);
            if (is_best && !is_max) B.push_back(p.id);
        }
        double alpha = 0.0;
        if (!B.empty()) {
            const bool in_B = std::find(B.begin(), B.end(), r.id) != B.end();
            const bool in_M = std::find(M.begin(), M.end(), r.id) != M.end();
            if (in_B) alpha = 1.0 / (double(n) * double(B.size()));
            else if (in_M) alpha = -1.0 / (double(n) * double(M.size()));
        }
        const double rtt_s = effective_rtt_s(r);
        const double base = (r.cwnd / (rtt_s * rtt_s)) / (sum * sum);
        return base + alpha / r.cwnd;
    }

    double olia_quality(const PathState& p) const {
        const double l = std::max(p.olia.l1, p.olia.l2);
        return l * l / effective_rtt_s(p);
    }

    double effective_rtt_s(const PathState& p) const {
        return (p.srtt_ms > 0 ? p.srtt_ms : cfg_.initial_srtt_ms) / 1000.0;
    }

    void apply_loss_cc(PathState& ps) {
        ps.cwnd = std::max(1.0, ps.cwnd / 2.0);
        ps.ssthresh = ps.cwnd;
        ps.slow_start = false;
        ps.loss_events++;
        ps.olia.l2 = ps.olia.l1;
        ps.olia.l1 = 0.0;
    }

    void declare_loss(PacketRecord& rec) {
        rec.lost = true;
        PathState& ps = paths_[static_cast<std::size_t>(rec.path)];
        ps.inflight--;
        apply_loss_cc(ps);
        remove_outstanding(rec.path, rec.seq);
        if (!delivered_.count(rec.chunk))
            retransmit_.push_front({rec.chunk, rec.size});
        notify_feedback(rec, false, 0.0);
    }

    void bump_dupacks(int path, std::uint64_t acked_seq) {
        auto& out = outstanding_[static_cast<std::size_t>(path)];
        std::vector<std::uint64_t> to_lose;
        for (std::uint64_t s : out) {
            if (s >= acked_seq) break;
            auto it = unacked_.find(s);
            if (it == unacked_.end() || it->second.acked || it->second.lost) continue;
            if (++it->second.dupacks >= cfg_.dupack_threshold) to_lose.push_back(s);
        }
        for (std::uint64_t s : to_lose) {
            auto it = unacked_.find(s);
            if (it != unacked_.end() && !it->second.acked && !it->second.lost)
                declare_loss(it->second);
        }
    }

    void remove_outstanding(int path, std::uint64_t seq) {
        auto& out = outstanding_[static_cast<std::size_t>(path)];
        for (auto it = out.begin(); it != out.end(); ++it)
            if (*it == seq) { out.erase(it); return; }
    }

    void deliver_chunk(std::uint64_t chunk, double size) {
        if (delivered_.count(chunk)) return;
        delivered_.insert(chunk);
        bytes_delivered_ += size;
        // drop a pending retransmission of this chunk, if any
        for (auto it = retransmit_.begin(); it != retransmit_.end(); ++it) {
            if (it->first == chunk) { retransmit_.erase(it); break; }
        }
    }

    void notify_feedback(const PacketRecord& rec, bool acked, double rtt_ms) {
        if (!sched_) return;
        PacketFeedback fb;
        fb.seq = rec.seq;
        fb.path_id = rec.path;
        fb.acked = acked;
        fb.send_time_s = offset_ + rec.send_time;
        fb.done_time_s = abs_now();
        fb.size_bytes = rec.size;
        fb.flight_bytes = bytes_delivered_ - rec.delivered_at_send;
        fb.rtt_sample_ms = rtt_ms;
        sched_->on_feedback(fb, make_view());
    }

    void try_send() {
        if (!sched_) return;
        while (true) {
            if (bytes_unsent_ <= 0 && retransmit_.empty()) return;
            SchedulerView view = make_view();
            if (!any_headroom(view)) return;
            const SchedulerDecision d = sched_->select(view);
            if (d.is_defer()) return;
            if (d.path_id < 0 || d.path_id >= path_count())
                throw ContractViolation("scheduler returned invalid path id");
            const PathView& pv = view.paths[static_cast<std::size_t>(d.path_id)];
            if (!pv.headroom)
                throw ContractViolation("scheduler returned a path without headroom");
            send_one(d.path_id, view);
        }
    }

    void send_one(int path, const SchedulerView& at_send) {
        std::uint64_t chunk;
        double size;
        if (!retransmit_.empty()) {
            chunk = retransmit_.front().first;
            size = retransmit_.front().second;
            retransmit_.pop_front();
        } else {
            chunk = next_chunk_++;
            size = std::min(cfg_.packet_bytes, bytes_unsent_);
            bytes_unsent_ -= size;
        }
        PacketRecord rec;
        rec.seq = next_seq_++;
        rec.chunk = chunk;
        rec.path = path;
        rec.send_time = loop_.now();
        rec.size = size;
        rec.delivered_at_send = bytes_delivered_;
        unacked_.emplace(rec.seq, rec);
        outstanding_[static_cast<std::size_t>(path)].push_back(rec.seq);
        PathState& ps = paths_[static_cast<std::size_t>(path)];
        ps.inflight++;
        packets_sent_++;

        const PathModel& model =
            model_at_clamped(traces_[static_cast<std::size_t>(path)], abs_now());
        SimEvent ev = link_.send_packet(path, size, loop_.now(), model);
        ev.seq = rec.seq;
        loop_.schedule(ev);

        const double srtt = ps.srtt_ms > 0 ? ps.srtt_ms : cfg_.initial_srtt_ms;
        const double rto_s =
            std::max(cfg_.min_rto_ms, srtt + 4.0 * std::max(ps.rttvar_ms, srtt / 2.0)) /
            1000.0;
        SimEvent timer;
        timer.kind = EventKind::TimerExpiry;
        timer.fire_time = loop_.now() + rto_s;
        timer.seq = rec.seq;
        timer.path_id = path;
        loop_.schedule(timer);

        if (sched_) sched_->on_sent(rec.seq, path, at_send);
    }

    void check_stall() const {
        if (complete()) return;
        if (loop_.now() - last_progress_ > cfg_.stall_timeout_s)
            throw StallError("no transfer progress for " +
                             std::to_string(cfg_.stall_timeout_s) + "s");
    }

    std::vector<PathTrace> traces_;
    TransportConfig cfg_;
    LinkEmulator link_;
    SimLoop loop_;
    double offset_ = 0.0; // simulated time consumed by earlier transfers
    Scheduler* sched_ = nullptr;

    std::vector<PathState> paths_;
    std::unordered_map<std::uint64_t, PacketRecord> unacked_;
    std::vector<std::deque<std::uint64_t>> outstanding_; // send order per path
    std::vector<double> last_ack_time_; // per-path FIFO ACK return clamp
    std::deque<std::pair<std::uint64_t, double>> retransmit_; // (chunk, size)
    std::unordered_set<std::uint64_t> delivered_;
    std::uint64_t next_seq_ = 0;
    std::uint64_t next_chunk_ = 0;
    double start_time_ = 0.0;
    double transfer_bytes_ = 0.0;
    double bytes_unsent_ = 0.0;
    double bytes_delivered_ = 0.0;
    double last_progress_ = 0.0;
    std::uint64_t packets_sent_ = 0;
    std::uint64_t transfers_done_ = 0;
    std::uint64_t modeled_drops_ = 0;
};

} // namespace falconsim
