#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "bev/pipeline.hpp"

// bevkit: synthetic-data generation, training, evaluation, ablations,
// lifting benchmarks and gradient checks behind one binary.
//
// exit codes: 0 success, 1 validation error, 2 runtime failure

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) bev::raise("cannot open ", path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f.good()) bev::raise("cannot write ", path.string());
    f << text;
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string token;
    for (char c : csv) {
        if (c == ',') {
            if (!token.empty()) out.push_back(token);
            token.clear();
        } else {
            token += c;
        }
    }
    if (!token.empty()) out.push_back(token);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bevkit: multi-camera BEV segmentation toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_out, synth_config;
    int synth_scenes = -1;
    int64_t synth_seed = -1;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--scenes", synth_scenes, "number of scenes");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--config", synth_config, "generator config JSON");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string train_data, train_out, train_config;
    bool train_det = false;
    train_cmd->add_option("--data", train_data, "training dataset directory")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_option("--config", train_config, "train config JSON")->required();
    train_cmd->add_flag("--deterministic", train_det, "force deterministic mode");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, eval_data, eval_bins, eval_out;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint directory")->required();
    eval_cmd->add_option("--data", eval_data, "evaluation dataset directory")->required();
    eval_cmd->add_option("--bins", eval_bins, "distance bin edges, e.g. 0,10,20,30,40,50");
    eval_cmd->add_option("--out", eval_out, "optional output directory for eval.csv");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "run one ablation axis");
    std::string ab_axis, ab_values, ab_config, ab_out;
    int ab_seeds = 1;
    ablate_cmd->add_option("--axis", ab_axis, "axis name")->required();
    ablate_cmd->add_option("--values", ab_values, "comma-separated axis values")->required();
    ablate_cmd->add_option("--config", ab_config, "base train config JSON")->required();
    ablate_cmd->add_option("--seeds", ab_seeds, "seeds per value");
    ablate_cmd->add_option("--out", ab_out, "output directory")->required();

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "benchmark the lifting strategies");
    std::string bench_strategies = "sample,splat_uniform,splat_depth,deform,deform_multiscale";
    std::string bench_sizes = "64x2x64,128x4x128";
    std::string bench_out;
    int bench_repeats = 9;
    bench_cmd->add_option("--strategies", bench_strategies, "comma-separated strategies");
    bench_cmd->add_option("--sizes", bench_sizes, "comma-separated grid sizes ZxYxX");
    bench_cmd->add_option("--repeats", bench_repeats, "timed repetitions per case");
    bench_cmd->add_option("--out", bench_out, "optional output directory for bench.csv");

    // gradcheck
    app.add_subcommand("gradcheck", "finite-difference checks for every operation");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    }

    try {
        if (synth->parsed()) {
            bev::SynthConfig cfg;
            if (!synth_config.empty()) cfg = bev::synth_config_from_json(read_file(synth_config));
            if (synth_scenes >= 0) cfg.n_scenes = synth_scenes;
            if (synth_seed >= 0) cfg.seed = static_cast<uint64_t>(synth_seed);
            cfg.validate();
            bev::write_dataset(cfg, synth_out);
            std::cout << "wrote " << cfg.n_scenes << " scenes to " << synth_out << "\n";
        } else if (train_cmd->parsed()) {
            bev::TrainConfig cfg = bev::TrainConfig::from_json(read_file(train_config));
            if (train_det) cfg.deterministic = true;
            bev::Dataset data = bev::read_dataset(train_data);
            bev::TrainResult result = bev::train(cfg, data);
            fs::create_directories(train_out);
            write_file(fs::path(train_out) / "metrics.csv", result.metrics_csv);
            write_file(fs::path(train_out) / "config.json", cfg.to_json());
            bev::save_checkpoint(train_out, result.params, cfg);
            std::cout << "trained " << cfg.steps << " steps; checkpoint in " << train_out << "\n";
        } else if (eval_cmd->parsed()) {
            auto [params, cfg] = bev::load_checkpoint(eval_ckpt);
            bev::Dataset data = bev::read_dataset(eval_data);
            std::vector<double> bins = cfg.eval_bins;
            if (!eval_bins.empty()) {
                bins.clear();
                for (const std::string& tok : split_list(eval_bins)) bins.push_back(std::stod(tok));
            }
            bev::EvalReport report = bev::evaluate(cfg, params, data, bins);
            std::cout << report.to_csv();
            if (!eval_out.empty()) {
                fs::create_directories(eval_out);
                write_file(fs::path(eval_out) / "eval.csv", report.to_csv());
                write_file(fs::path(eval_out) / "config.json", report.config_echo);
            }
        } else if (ablate_cmd->parsed()) {
            bev::TrainConfig cfg = bev::TrainConfig::from_json(read_file(ab_config));
            const std::string csv =
                bev::ablate(ab_axis, split_list(ab_values), cfg, ab_seeds, ab_out);
            write_file(fs::path(ab_out) / "config.json", cfg.to_json());
            std::cout << csv;
        } else if (bench_cmd->parsed()) {
            const std::string csv =
                bev::bench(split_list(bench_strategies), split_list(bench_sizes), bench_repeats);
            std::cout << csv;
            if (!bench_out.empty()) {
                fs::create_directories(bench_out);
                write_file(fs::path(bench_out) / "bench.csv", csv);
            }
        } else {  // gradcheck
            const auto results = bev::gradcheck_suite();
            std::cout << bev::gradcheck_report(results);
            for (const auto& r : results)
                if (!r.pass) return 2;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
