// Experiment harness CLI: data generation, training, evaluation sweeps,
// runtime benchmarks and latent export, driven by flat key=value configs.
//
// Exit codes: 0 success, 1 config error, 2 data error, 3 numeric failure.

#include <cstring>
#include <iostream>
#include <string>

#include "icil/experiment.hpp"

namespace {

void usage(std::ostream& os) {
  os << "usage: bench_cli <command> [--config PATH] [--checkpoint PATH]\n"
        "                 [--out DIR] [--seed N] [--backbone longhorn|attention]\n"
        "\n"
        "commands:\n"
        "  gen-data             generate expert demonstrations + manifest\n"
        "  train                train a policy on generated demos\n"
        "  eval                 evaluate a checkpoint on the configured grid\n"
        "  sweep-extrapolation  success rate vs number of test demonstrations\n"
        "  sweep-dilation       success rate vs time-dilation factor\n"
        "  sweep-beta           success rate vs test-time beta scaling\n"
        "  bench-runtime        prompt ingestion / decode timing vs length\n"
        "  export-latents       per-step latents + 2-D PCA projection\n";
}

}  // namespace

int main(int argc, char** argv) {
  using icil::bench::ExperimentConfig;
  if (argc < 2) {
    usage(std::cerr);
    return 1;
  }
  std::string command = argv[1];
  if (command == "-h" || command == "--help" || command == "help") {
    usage(std::cout);
    return 0;
  }

  try {
    std::string config_path, checkpoint, out, seed, backbone;
    for (int i = 2; i < argc; ++i) {
      std::string flag = argv[i];
      auto next = [&]() -> std::string {
        if (i + 1 >= argc)
          throw icil::num::config_error("missing value for " + flag);
        return argv[++i];
      };
      if (flag == "--config") config_path = next();
      else if (flag == "--checkpoint") checkpoint = next();
      else if (flag == "--out") out = next();
      else if (flag == "--seed") seed = next();
      else if (flag == "--backbone") backbone = next();
      else throw icil::num::config_error("unknown flag '" + flag + "'");
    }
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = icil::bench::parse_config_file(config_path);
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    if (!out.empty()) cfg.out = out;
    if (!backbone.empty()) cfg.backbone = backbone;
    if (!seed.empty()) {
      apply_config_line(cfg, "seeds", seed);
      apply_config_line(cfg, "train_seed", seed);
    }

    if (command == "gen-data") icil::bench::cmd_gen_data(cfg);
    else if (command == "train") icil::bench::cmd_train(cfg);
    else if (command == "eval") icil::bench::cmd_eval(cfg);
    else if (command == "sweep-extrapolation")
      icil::bench::cmd_sweep_extrapolation(cfg);
    else if (command == "sweep-dilation") icil::bench::cmd_sweep_dilation(cfg);
    else if (command == "sweep-beta") icil::bench::cmd_sweep_beta(cfg);
    else if (command == "bench-runtime") icil::bench::cmd_bench_runtime(cfg);
    else if (command == "export-latents") icil::bench::cmd_export_latents(cfg);
    else {
      std::cerr << "unknown command '" << command << "'\n";
      usage(std::cerr);
      return 1;
    }
  } catch (const icil::num::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const icil::num::data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const icil::num::numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
