// Command-line front end for the multipath scheduler simulator: bulk-transfer
// runs, convergence curves, stress tests, parameter sweeps, offline
// meta-training, and trace validation.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "falconsim/harness.hpp"

namespace {

int g_verbosity = 1; // 0 quiet, 1 normal, 2 debug; FALCONSIM_LOG overrides

void init_verbosity() {
    if (const char* env = std::getenv("FALCONSIM_LOG")) {
        const std::string v = env;
        if (v == "quiet" || v == "0") g_verbosity = 0;
        else if (v == "debug" || v == "2") g_verbosity = 2;
        else g_verbosity = 1;
    }
}

void log_info(const std::string& msg) {
    if (g_verbosity >= 1) std::cerr << msg << '\n';
}

std::vector<double> parse_intervals(const std::string& csv) {
    std::vector<double> out;
    std::istringstream ss(csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stod(cell));
        } catch (...) {
            throw falconsim::ConfigError("bad interval value: " + cell);
        }
    }
    if (out.empty()) throw falconsim::ConfigError("no intervals given");
    return out;
}

} // namespace

int main(int argc, char** argv) {
    using namespace falconsim;
    init_verbosity();

    CLI::App app{"Trace-driven multipath transport simulator and scheduler lab"};
    app.require_subcommand(1);

    std::string config_path, scheduler, out_dir, intervals_csv = "8,4,2,0.5,0.3";
    std::string axis = "k", log_path, bank_path, trace_path;
    std::uint64_t seed = 0;
    bool seed_set = false, scheduler_set = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--scheduler", scheduler, "scheduler under test")
            ->each([&](const std::string&) { scheduler_set = true; });
        cmd->add_option("--seed", seed, "top-level seed")
            ->each([&](const std::string&) { seed_set = true; });
        cmd->add_option("--out", out_dir, "output directory");
    };

    auto* run_cmd = app.add_subcommand("run", "bulk-transfer experiment");
    add_common(run_cmd);

    auto* stress_cmd = app.add_subcommand("stress", "changing-condition stress test");
    add_common(stress_cmd);
    stress_cmd->add_option("--intervals", intervals_csv,
                           "comma-separated change intervals in seconds");

    auto* conv_cmd = app.add_subcommand("converge", "online-learning cost curve");
    add_common(conv_cmd);

    auto* sweep_cmd = app.add_subcommand("sweep", "parameter sweep on the toy family");
    add_common(sweep_cmd);
    sweep_cmd->add_option("--axis", axis, "sweep axis: k|subranges");

    auto* meta_cmd = app.add_subcommand("train-meta", "offline meta-training");
    add_common(meta_cmd);
    meta_cmd->add_option("--log", log_path, "experience log CSV")->required();
    meta_cmd->add_option("--bank", bank_path, "meta-model bank file")->required();

    auto* validate_cmd = app.add_subcommand("validate-trace", "validate a trace file");
    validate_cmd->add_option("file", trace_path, "trace file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    ExperimentConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_config(config_path);
        if (scheduler_set) cfg.scheduler = scheduler;
        if (seed_set) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (cfg.out_dir.empty()) cfg.out_dir = "results";
        cfg.validate();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (validate_cmd->parsed()) {
            std::ifstream in(trace_path);
            if (!in) {
                std::cerr << "config error: cannot open trace file: " << trace_path << '\n';
                return 2;
            }
            try {
                const PathTrace t = load_trace(in);
                std::cout << "ok: " << t.segments.size() << " segment(s), duration "
                          << t.duration_s << " s\n";
                return 0;
            } catch (const TraceError& e) {
                std::cerr << "invalid trace: " << e.what() << '\n';
                return 2;
            }
        }
        if (run_cmd->parsed()) {
            log_info("running " + std::to_string(cfg.repetitions) +
                     " repetitions with scheduler " + cfg.scheduler);
            const RunResult result = run_bulk(cfg);
            emit_results(result, cfg, cfg.out_dir);
            std::cout << "median_s=" << result.median() << " mean_s=" << result.mean()
                      << '\n';
            return 0;
        }
        if (conv_cmd->parsed()) {
            log_info("convergence run for scheduler " + cfg.scheduler);
            const ConvergenceCurve curve = run_convergence(cfg);
            emit_convergence(curve, cfg, cfg.out_dir);
            for (std::size_t i = 0; i < curve.checkpoints.size(); ++i)
                std::cout << curve.checkpoints[i] << ' ' << curve.mean_scores[i] << '\n';
            return 0;
        }
        if (stress_cmd->parsed()) {
            const auto intervals = parse_intervals(intervals_csv);
            log_info("stress run for scheduler " + cfg.scheduler);
            const StressResult result = run_stress(cfg, intervals);
            emit_stress(result, cfg, cfg.out_dir);
            for (std::size_t i = 0; i < result.intervals_s.size(); ++i)
                std::cout << result.intervals_s[i] << ' ' << result.scores[i] << '\n';
            return 0;
        }
        if (sweep_cmd->parsed()) {
            log_info("parameter sweep over axis " + axis);
            const auto points = run_param_sweep(cfg, axis);
            emit_sweep(points, axis, cfg, cfg.out_dir);
            for (const auto& p : points) std::cout << p.value << ' ' << p.metric << '\n';
            return 0;
        }
        if (meta_cmd->parsed()) {
            ScenarioSpec scenario = resolve_scenario(cfg);
            FalconConfig fc = learner_config(cfg, scenario);
            std::ifstream in(log_path);
            if (!in) {
                std::cerr << "config error: cannot open experience log: " << log_path << '\n';
                return 2;
            }
            const ExperienceLog log =
                ExperienceLog::load_csv(in, fc.n_paths, fc.state_dim());
            MetaBank bank(fc.net_sizes(), fc.meta, derive_seed(cfg.seed, "bank"));
            {
                std::ifstream existing(bank_path, std::ios::binary);
                if (existing)
                    bank = MetaBank::load(existing, fc.meta, derive_seed(cfg.seed, "bank"));
            }
            MetaLearner learner(fc.agent, derive_seed(cfg.seed, "meta"));
            learner.meta_update(bank, log.records(), 0.0);
            std::ofstream out(bank_path, std::ios::binary);
            if (!out) {
                std::cerr << "runtime error: cannot write bank file: " << bank_path << '\n';
                return 3;
            }
            bank.save(out);
            std::cout << "bank buckets trained: " << bank.trained_count() << '\n';
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return 3;
    }
    return 2;
}
