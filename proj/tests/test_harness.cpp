#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "falconsim/harness.hpp"

using namespace falconsim;
namespace fs = std::filesystem;

namespace {

ExperimentConfig quick_config(const std::string& scheduler, int reps = 3) {
    ExperimentConfig cfg;
    cfg.scenario = "4g+wlan";
    cfg.scheduler = scheduler;
    cfg.repetitions = reps;
    cfg.transfer_bytes = 2e5;
    cfg.seed = 1;
    return cfg;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("falconsim-test-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

} // namespace

TEST_CASE("path presets match the published link classes") {
    const PathModel g5 = preset_path("5g", false);
    CHECK(g5.bandwidth_bps == 1100e6);
    CHECK(g5.rtt_mean_ms == 27.4);
    CHECK(g5.rtt_dev_ms == 6.4);
    CHECK(g5.loss_rate == 0.001);
    const PathModel g4 = preset_path("4g", false);
    CHECK(g4.bandwidth_bps == 140e6);
    CHECK(g4.rtt_mean_ms == 29.2);
    const PathModel wlan = preset_path("wlan", false);
    CHECK(wlan.bandwidth_bps == 30e6);
    CHECK(wlan.loss_rate == 0.007);
    // desk scale divides bandwidth by 10 and keeps latency/loss
    const PathModel desk = preset_path("wlan", true);
    CHECK(desk.bandwidth_bps == 3e6);
    CHECK(desk.rtt_mean_ms == wlan.rtt_mean_ms);
    CHECK(desk.loss_rate == wlan.loss_rate);
    CHECK_THROWS_AS(preset_path("dialup", true), ConfigError);
}

TEST_CASE("scenarios are two-path and the driving trace is time-varying") {
    for (const char* name : {"4g+wlan", "4g+5g", "5g+wlan", "driving"}) {
        const auto s = make_scenario(name, true);
        CHECK(s.traces.size() == 2);
    }
    CHECK_THROWS_AS(make_scenario("nope", true), ConfigError);
    const auto drive = make_scenario("driving", true);
    CHECK(drive.traces[0].segments.size() > 5);
    // combined peak capacity sums per-path peaks
    const auto fixed = make_scenario("4g+wlan", true);
    CHECK(scenario_max_bandwidth(fixed) == Catch::Approx(14e6 + 3e6));
}

TEST_CASE("condition_of translates link models into bucket coordinates") {
    const auto c = condition_of(preset_path("wlan", true));
    CHECK(c.loss_pct == Catch::Approx(0.7));
    CHECK(c.rtt_mean_ms == 20.0);
    CHECK(c.rtt_var_pct == Catch::Approx(50.0));
    const auto net = condition_of(std::vector<PathModel>{
        preset_path("4g", true), preset_path("wlan", true)});
    CHECK(net.paths.size() == 2);
    CHECK(bucket_of(net) >= 0);
    CHECK(bucket_of(net) < kBucketCount);
}

TEST_CASE("config parsing handles comments, errors, and unknown keys") {
    std::istringstream good(
        "# a comment\n"
        "scenario = driving\n"
        "repetitions = 9   # trailing comment\n"
        "\n"
        "seed = 77\n");
    const auto cfg = parse_config(good);
    CHECK(cfg.scenario == "driving");
    CHECK(cfg.repetitions == 9);
    CHECK(cfg.seed == 77);

    std::istringstream no_eq("scenario driving\n");
    CHECK_THROWS_WITH(parse_config(no_eq),
                      Catch::Matchers::ContainsSubstring("line 1"));
    std::istringstream unknown("does_not_exist = 1\n");
    CHECK_THROWS_AS(parse_config(unknown), ConfigError);
    std::istringstream invalid("repetitions = 0\n");
    CHECK_THROWS_AS(parse_config(invalid), ConfigError);
}

TEST_CASE("write_config echoes a configuration that parses back identically") {
    ExperimentConfig cfg = quick_config("blest", 5);
    cfg.gamma = 0.85;
    cfg.k_steps = 8;
    cfg.desk_scale = false;
    std::ostringstream os;
    write_config(os, cfg);
    std::istringstream is(os.str());
    const ExperimentConfig back = parse_config(is);
    std::ostringstream os2;
    write_config(os2, back);
    CHECK(os2.str() == os.str());
    CHECK(back.scheduler == "blest");
    CHECK(back.gamma == 0.85);
    CHECK(back.k_steps == 8);
    CHECK(back.desk_scale == false);
}

TEST_CASE("custom trace files override the scenario") {
    TempDir dir;
    const auto t1 = dir.path / "a.trace";
    const auto t2 = dir.path / "b.trace";
    std::ofstream(t1) << "0,1000000,10,0,0\n";
    std::ofstream(t2) << "0,2000000,20,1,0.01\n";
    ExperimentConfig cfg = quick_config("minrtt");
    cfg.trace_files = {t1.string(), t2.string()};
    const auto s = resolve_scenario(cfg);
    CHECK(s.name == "custom");
    REQUIRE(s.traces.size() == 2);
    CHECK(s.traces[1].segments[0].model.bandwidth_bps == 2000000.0);

    cfg.trace_files = {t1.string(), (dir.path / "missing.trace").string()};
    CHECK_THROWS_AS(resolve_scenario(cfg), ConfigError);
}

TEST_CASE("relative score compares medians against the offline reference") {
    RunResult test, ref;
    test.times_s = {2.0, 2.0, 2.0};
    ref.times_s = {2.0};
    CHECK(relative_score(test, ref) == 1.0);
    test.times_s = {2.5};
    ref.times_s = {2.0};
    CHECK(relative_score(test, ref) == 0.8);
    test.times_s = {2.0};
    ref.times_s = {2.5};
    CHECK(relative_score(test, ref) == 1.25);
    RunResult zero;
    zero.times_s = {0.0};
    CHECK_THROWS_AS(relative_score(zero, ref), std::runtime_error);
}

TEST_CASE("run result percentiles interpolate") {
    RunResult r;
    r.times_s = {4.0, 1.0, 3.0, 2.0};
    CHECK(r.median() == Catch::Approx(2.5));
    CHECK(r.mean() == Catch::Approx(2.5));
    CHECK(r.percentile(0.0) == 1.0);
    CHECK(r.percentile(100.0) == 4.0);
    RunResult empty;
    CHECK_THROWS_AS(empty.median(), std::runtime_error);
}

TEST_CASE("bulk runs are bit-identical for a fixed seed") {
    const auto cfg = quick_config("minrtt");
    const RunResult a = run_bulk(cfg);
    const RunResult b = run_bulk(cfg);
    REQUIRE(a.times_s.size() == 3);
    CHECK(a.times_s == b.times_s);
    ExperimentConfig other = cfg;
    other.seed = 2;
    CHECK(run_bulk(other).times_s != a.times_s);
}

TEST_CASE("minRTT is no slower than round robin on asymmetric paths") {
    auto cfg = quick_config("minrtt", 7);
    cfg.transfer_bytes = 5e5;
    const double t_min = run_bulk(cfg).median();
    cfg.scheduler = "rr";
    const double t_rr = run_bulk(cfg).median();
    CHECK(t_min <= t_rr * 1.02);
}

TEST_CASE("emitted CSV artifacts are well-formed") {
    TempDir dir;
    const auto cfg = quick_config("minrtt", 4);
    const RunResult r = run_bulk(cfg);
    emit_results(r, cfg, dir.path.string());

    const std::string rows = read_file(dir.path / "results.csv");
    // header + one row per repetition + summary
    CHECK(std::count(rows.begin(), rows.end(), '\n') == 1 + 4 + 1);
    CHECK(rows.rfind("repetition,download_time_s\n", 0) == 0);
    CHECK(rows.find("summary,median=") != std::string::npos);

    const std::string cdf = read_file(dir.path / "cdf.csv");
    std::istringstream is(cdf);
    std::string line;
    std::getline(is, line); // header
    double last_t = -1.0, last_p = 0.0;
    int n = 0;
    while (std::getline(is, line)) {
        const auto comma = line.find(',');
        const double t = std::stod(line.substr(0, comma));
        const double p = std::stod(line.substr(comma + 1));
        CHECK(t >= last_t);
        CHECK(p > last_p);
        last_t = t;
        last_p = p;
        ++n;
    }
    CHECK(n == 4);
    CHECK(last_p == Catch::Approx(1.0));
}

TEST_CASE("the manifest replays to an identical run") {
    TempDir dir;
    const auto cfg = quick_config("blest", 3);
    const RunResult first = run_bulk(cfg);
    emit_results(first, cfg, dir.path.string());
    const ExperimentConfig replay =
        load_config((dir.path / "manifest.cfg").string());
    const RunResult second = run_bulk(replay);
    CHECK(second.times_s == first.times_s);
}

TEST_CASE("stress conditions stay inside the preset envelope") {
    const ConditionEnvelope e = preset_envelope(true);
    const auto conds = sample_stress_conditions(24, 2, true, 5);
    REQUIRE(conds.size() == 24);
    for (const auto& c : conds) {
        REQUIRE(c.size() == 2);
        for (const auto& m : c) {
            CHECK(m.bandwidth_bps >= e.bw_lo);
            CHECK(m.bandwidth_bps <= e.bw_hi);
            CHECK(m.rtt_mean_ms >= e.rtt_lo);
            CHECK(m.rtt_mean_ms <= e.rtt_hi);
            CHECK(m.rtt_dev_ms >= e.dev_lo);
            CHECK(m.rtt_dev_ms <= e.dev_hi);
            CHECK(m.loss_rate >= e.loss_lo);
            CHECK(m.loss_rate <= e.loss_hi);
        }
    }
    // deterministic in the seed
    const auto again = sample_stress_conditions(24, 2, true, 5);
    for (std::size_t i = 0; i < conds.size(); ++i)
        for (std::size_t p = 0; p < 2; ++p)
            CHECK(conds[i][p].bandwidth_bps == again[i][p].bandwidth_bps);
}

TEST_CASE("switching traces hop through the sampled conditions") {
    const auto conds = sample_stress_conditions(4, 2, true, 9);
    const auto traces = switching_traces(conds, 2.0);
    REQUIRE(traces.size() == 2);
    for (const auto& t : traces) {
        REQUIRE(t.segments.size() == 4);
        CHECK(t.duration_s == 8.0);
        for (std::size_t k = 0; k < 4; ++k)
            CHECK(t.segments[k].start_s == 2.0 * double(k));
    }
    CHECK(traces[0].segments[2].model.bandwidth_bps ==
          conds[2][0].bandwidth_bps);
}

TEST_CASE("convergence checkpoints double from 64") {
    const auto cps = convergence_checkpoints(1024);
    CHECK(cps == std::vector<std::uint64_t>{64, 128, 256, 512, 1024});
    CHECK(convergence_checkpoints(63).empty());
}

TEST_CASE("toy task family has a known optimum") {
    ToyTask task;
    task.p = 0.25;
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const auto x = toy_sample_state(task, rng);
        CHECK(task.reward(x, task.best_action(x)) == 1.0);
        CHECK(task.reward(x, 1 - task.best_action(x)) == -1.0);
    }
    CHECK(toy_bucket(0.0, 3) == 0);
    CHECK(toy_bucket(0.34, 3) == 1);
    CHECK(toy_bucket(1.0, 3) == 2);
}

TEST_CASE("greedy policy scheduler is work-conserving") {
    Rng rng(3);
    Mlp net({8, 8, 2}, rng);
    GreedyPolicyScheduler s(net);
    SchedulerView v;
    PathView p0, p1;
    p0.path_id = 0;
    p0.srtt_ms = 20.0;
    p0.cwnd = 10.0;
    p1 = p0;
    p1.path_id = 1;
    v.paths = {p0, p1};
    // no headroom anywhere: defer
    CHECK(s.select(v).is_defer());
    // only one path open: it must be chosen regardless of the argmax
    v.paths[1].headroom = true;
    CHECK(s.select(v).path_id == 1);
    v.paths[1].headroom = false;
    v.paths[0].headroom = true;
    CHECK(s.select(v).path_id == 0);
}

TEST_CASE("learning scheduler names are recognized") {
    for (const char* n :
         {"falcon", "dqn-off", "dqn-on", "dqn-on-z", "dqn-on-n", "dqn-on-w",
          "bandit"})
        CHECK(is_learning_scheduler(n));
    for (const char* n : {"minrtt", "rr", "blest"})
        CHECK_FALSE(is_learning_scheduler(n));
}

TEST_CASE("measurement is independent per repetition seed") {
    const auto cfg = quick_config("minrtt", 2);
    const auto s = resolve_scenario(cfg);
    MinRttScheduler sched;
    const RunResult a = measure(s, cfg, sched, 10, 2);
    const RunResult b = measure(s, cfg, sched, 10, 2);
    CHECK(a.times_s == b.times_s);
    // different repetitions see different link randomness
    CHECK(a.times_s[0] != a.times_s[1]);
}
