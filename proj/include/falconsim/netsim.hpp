#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <istream>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "falconsim/rng.hpp"

namespace falconsim {

struct TraceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Time-invariant characterization of one path.
struct PathModel {
    double bandwidth_bps = 0.0;
    double rtt_mean_ms = 0.0;
    double rtt_dev_ms = 0.0;
    double loss_rate = 0.0;

    void validate() const {
        if (!(bandwidth_bps > 0)) throw TraceError("bandwidth must be > 0");
        if (!(rtt_mean_ms > 0)) throw TraceError("rtt mean must be > 0");
        if (rtt_dev_ms < 0) throw TraceError("rtt deviation must be >= 0");
        if (loss_rate < 0 || loss_rate > 1)
            throw TraceError("loss rate must be within [0,1]");
    }
};

struct TraceSegment {
    double start_s = 0.0;
    PathModel model;
};

// Piecewise-constant path behaviour over time.
struct PathTrace {
    std::vector<TraceSegment> segments;
    double duration_s = 0.0;
};

/// Trace file format: `start_time_s,bandwidth_bps,rtt_mean_ms,rtt_dev_ms,loss_rate`
// one segment per line, '#' comments, blank lines ignored.
inline PathTrace load_trace(std::istream& in) {
    PathTrace trace;
    std::string line;
    int lineno = 0;
    double last_start = -1.0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream row(line);
        TraceSegment seg;
        char c1, c2, c3, c4;
        if (!(row >> seg.start_s >> c1 >> seg.model.bandwidth_bps >> c2 >>
              seg.model.rtt_mean_ms >> c3 >> seg.model.rtt_dev_ms >> c4 >>
              seg.model.loss_rate) ||
            c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
            throw TraceError("trace parse error at line " + std::to_string(lineno));
        }
        try {
            seg.model.validate();
        } catch (const TraceError& e) {
            throw TraceError(std::string(e.what()) + " at line " + std::to_string(lineno));
        }
        if (trace.segments.empty() && seg.start_s != 0.0)
            throw TraceError("first segment must start at time 0 (line " +
                             std::to_string(lineno) + ")");
        if (seg.start_s <= last_start)
            throw TraceError("segment start times must be strictly increasing (line " +
                             std::to_string(lineno) + ")");
        last_start = seg.start_s;
        trace.segments.push_back(seg);
    }
    if (trace.segments.empty()) throw TraceError("no segments");
    trace.duration_s = std::max(last_start + 1.0, 1.0);
    return trace;
}

inline PathTrace single_segment_trace(const PathModel& m, double duration_s = 1e9) {
    m.validate();
    PathTrace t;
    t.segments.push_back({0.0, m});
    t.duration_s = duration_s;
    return t;
}

// Model of the last segment with start_time <= t (closed on the left).
inline const PathModel& model_at(const PathTrace& trace, double t) {
    if (t < 0 || t > trace.duration_s)
        throw std::out_of_range("model_at: time outside trace duration");
    const PathModel* m = &trace.segments.front().model;
    for (const auto& seg : trace.segments) {
        if (seg.start_s <= t) m = &seg.model;
        else break;
    }
    return *m;
}

/// As model_at but clamping: before 0 uses the first segment, past the end the
// last segment persists. Long runs replay the tail condition indefinitely.
inline const PathModel& model_at_clamped(const PathTrace& trace, double t) {
    const PathModel* m = &trace.segments.front().model;
    for (const auto& seg : trace.segments) {
        if (seg.start_s <= t) m = &seg.model;
        else break;
    }
    return *m;
}

enum class EventKind : std::uint8_t {
    PacketArrival,
    AckArrival,
    PacketLost,
    TraceSegmentChange,
    TimerExpiry,
};

struct SimEvent {
    double fire_time = 0.0;
    EventKind kind = EventKind::PacketArrival;
    int path_id = -1;
    std::uint64_t seq = 0;       // packet sequence / timer id
    double size_bytes = 0.0;
    double rtt_sample_ms = 0.0;  // the RTT realization drawn for this packet
    double send_time = 0.0;
};

// Deterministic event loop: events pop in fire_time order, ties broken by
// insertion sequence.
class SimLoop {
public:
    using Handler = std::function<void(const SimEvent&)>;

    double now() const { return now_; }

    void schedule(const SimEvent& ev) {
        if (ev.fire_time < now_)
            throw std::logic_error("event scheduled in the past");
        queue_.push(Entry{ev, insert_counter_++});
    }

    bool empty() const { return queue_.empty(); }

    void clear() {
        queue_ = {};
        now_ = 0.0;
        insert_counter_ = 0;
    }

    // Dispatch until `stop` returns true or the queue drains. Returns the
    // clock value at exit.
    double run_until(const Handler& handler, const std::function<bool()>& stop) {
        while (!queue_.empty()) {
            if (stop && stop()) break;
            const Entry e = queue_.top();
            queue_.pop();
            now_ = e.ev.fire_time;
            handler(e.ev);
        }
        return now_;
    }

private:
    struct Entry {
        SimEvent ev;
        std::uint64_t order;
        bool operator>(const Entry& o) const {
            if (ev.fire_time != o.ev.fire_time) return ev.fire_time > o.ev.fire_time;
            return order > o.order;
        }
    };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue_;
    double now_ = 0.0;
    std::uint64_t insert_counter_ = 0;
};

// Turns a packet send into its delivery (or loss) event. Keeps per-path
// serialization state so back-to-back sends queue FIFO behind each other.
class LinkEmulator {
public:
    explicit LinkEmulator(int n_paths, std::uint64_t seed)
        : busy_until_(n_paths, 0.0), last_arrival_(n_paths, 0.0) {
        for (int p = 0; p < n_paths; ++p)
            rngs_.emplace_back(derive_seed(seed, "link-path:" + std::to_string(p)));
    }

    int path_count() const { return static_cast<int>(busy_until_.size()); }

    // RTT sample: Normal(mean, dev^2) truncated below at max(1ms, mean-3dev).
    static double sample_rtt_ms(const PathModel& m, Rng& rng) {
        const double floor_ms = std::max(1.0, m.rtt_mean_ms - 3.0 * m.rtt_dev_ms);
        double s = rng.normal(m.rtt_mean_ms, m.rtt_dev_ms);
        return std::max(s, floor_ms);
    }

    SimEvent send_packet(int path, double size_bytes, double now,
                         const PathModel& model) {
        Rng& rng = rngs_[static_cast<std::size_t>(path)];
        SimEvent ev;
        ev.path_id = path;
        ev.size_bytes = size_bytes;
        ev.send_time = now;
        ev.rtt_sample_ms = sample_rtt_ms(model, rng);
        const double owd_s = ev.rtt_sample_ms / 2.0 / 1000.0;
        if (rng.bernoulli(model.loss_rate)) {
            ev.kind = EventKind::PacketLost;
            ev.fire_time = now + owd_s;
            return ev;
        }
        const double ser_s = size_bytes * 8.0 / model.bandwidth_bps;
        double& busy = busy_until_[static_cast<std::size_t>(path)];
        const double start = std::max(now, busy);
        busy = start + ser_s;
        ev.kind = EventKind::PacketArrival;
        // a FIFO link never reorders: a later packet cannot overtake an
        // earlier one even when its delay sample is smaller
        double& last = last_arrival_[static_cast<std::size_t>(path)];
        ev.fire_time = std::max(busy + owd_s, last);
        last = ev.fire_time;
        return ev;
    }

    void reset() {
        std::fill(busy_until_.begin(), busy_until_.end(), 0.0);
        std::fill(last_arrival_.begin(), last_arrival_.end(), 0.0);
    }

private:
    std::vector<double> busy_until_;
    std::vector<double> last_arrival_;
    std::vector<Rng> rngs_;
};

} // namespace falconsim
