#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "r3lab/config.hpp"
#include "r3lab/metrics.hpp"
#include "r3lab/runner.hpp"
#include "r3lab/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitVerifyFailed = 3;

void print_usage() {
  std::cout
      << "Usage: r3l-lab <subcommand> [options]\n"
      << "\n"
      << "Subcommands:\n"
      << "  run            Train with the configured algorithm and seeds\n"
      << "  sweep          Cartesian grid of config overrides, one run each\n"
      << "  verify         Run the theory checks and report pass/fail\n"
      << "  emit-plotdata  Write one CSV per metric from a run directory\n"
      << "\n"
      << "Options:\n"
      << "  --config PATH      Config file (flat key = value lines)\n"
      << "  --set KEY=VALUE    Override a config key (repeatable)\n"
      << "  --seed N           Override the master seed\n"
      << "  --out DIR          Output directory (default: $R3L_LAB_OUT or ./out)\n"
      << "  --grid KEY=V1,V2   Sweep axis (repeatable, sweep only)\n"
      << "  --run-dir DIR      Run directory (emit-plotdata only)\n";
}

struct CliArgs {
  std::string subcommand;
  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<std::string> grid;
  std::string out_dir;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
};

CliArgs parse_args(int argc, char** argv) {
  CliArgs args;
  if (argc < 2) throw r3lab::env::ConfigError("missing subcommand");
  args.subcommand = argv[1];
  for (int i = 2; i < argc; ++i) {
    std::string a = argv[i];
    auto need_value = [&](const char* flag) -> std::string {
      if (i + 1 >= argc)
        throw r3lab::env::ConfigError(std::string(flag) + " requires a value");
      return argv[++i];
    };
    if (a == "--config") args.config_path = need_value("--config");
    else if (a == "--set") args.overrides.push_back(need_value("--set"));
    else if (a == "--grid") args.grid.push_back(need_value("--grid"));
    else if (a == "--out") args.out_dir = need_value("--out");
    else if (a == "--run-dir") args.run_dir = need_value("--run-dir");
    else if (a == "--seed")
      args.seed = std::stoull(need_value("--seed"));
    else if (a == "--help" || a == "-h") args.subcommand = "help";
    else throw r3lab::env::ConfigError("unknown option '" + a + "'");
  }
  return args;
}

std::string default_out_root() {
  if (const char* env = std::getenv("R3L_LAB_OUT")) return env;
  return "out";
}

r3lab::config::RunConfig load_config(const CliArgs& args) {
  r3lab::config::RunConfig cfg;
  if (!args.config_path.empty())
    cfg = r3lab::config::parse_file(args.config_path);
  for (const auto& ov : args.overrides) r3lab::config::apply_override(cfg, ov);
  if (args.seed) {
    cfg.master_seed = *args.seed;
    cfg.seeds.clear();
  }
  r3lab::config::validate(cfg);
  return cfg;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '.' || c == '=' || c == '/' || c == ' ') out += '-';
    else if (c == ',') out += '+';
    else out += c;
  }
  return out;
}

int cmd_run(const CliArgs& args) {
  auto cfg = load_config(args);
  const std::string out =
      args.out_dir.empty() ? default_out_root() + "/run" : args.out_dir;
  auto agg = r3lab::runner::run_all(cfg, out);
  std::cout << "run complete: " << agg.runs.size() << " seed(s), median final "
            << "eval reward " << agg.median_final_eval << "\n"
            << "outputs under " << out << "\n";
  return kExitOk;
}

int cmd_sweep(const CliArgs& args) {
  auto base = load_config(args);
  if (args.grid.empty())
    throw r3lab::env::ConfigError("sweep needs at least one --grid axis");
  struct Axis {
    std::string key;
    std::vector<std::string> values;
  };
  std::vector<Axis> axes;
  for (const auto& g : args.grid) {
    auto eq = g.find('=');
    if (eq == std::string::npos)
      throw r3lab::env::ConfigError("--grid expects KEY=V1,V2,...");
    Axis axis;
    axis.key = g.substr(0, eq);
    std::string vals = g.substr(eq + 1);
    std::size_t pos = 0;
    while (pos != std::string::npos) {
      auto comma = vals.find(',', pos);
      axis.values.push_back(vals.substr(
          pos, comma == std::string::npos ? std::string::npos : comma - pos));
      pos = comma == std::string::npos ? comma : comma + 1;
    }
    if (axis.values.empty())
      throw r3lab::env::ConfigError("--grid axis '" + axis.key + "' is empty");
    axes.push_back(std::move(axis));
  }
  const std::string out =
      args.out_dir.empty() ? default_out_root() + "/sweep" : args.out_dir;
  std::vector<std::size_t> index(axes.size(), 0);
  int runs = 0;
  while (true) {
    auto cfg = base;
    std::string name;
    for (std::size_t i = 0; i < axes.size(); ++i) {
      const auto& axis = axes[i];
      const auto& value = axis.values[index[i]];
      r3lab::config::apply_key(cfg, axis.key, value);
      if (!name.empty()) name += "_";
      name += sanitize(axis.key) + "-" + sanitize(value);
    }
    r3lab::config::validate(cfg);
    r3lab::runner::run_all(cfg, out + "/" + name);
    ++runs;
    std::size_t i = 0;
    for (; i < axes.size(); ++i) {
      if (++index[i] < axes[i].values.size()) break;
      index[i] = 0;
    }
    if (i == axes.size()) break;
  }
  std::cout << "sweep complete: " << runs << " run(s) under " << out << "\n";
  return kExitOk;
}

int cmd_verify() {
  auto results = r3lab::verify::run_all_checks();
  bool all = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "  " << r.detail
              << "\n        report: " << r3lab::verify::format_report(r.report)
              << "\n";
    all = all && r.pass;
  }
  std::cout << (all ? "verify: all checks passed\n"
                    : "verify: some checks FAILED\n");
  return all ? kExitOk : kExitVerifyFailed;
}

int cmd_emit_plotdata(const CliArgs& args) {
  std::string dir = args.run_dir.empty() ? args.out_dir : args.run_dir;
  if (dir.empty())
    throw r3lab::env::ConfigError("emit-plotdata needs --run-dir");
  const std::string metrics = dir + "/metrics.jsonl";
  const std::string out = dir + "/plotdata";
  std::filesystem::create_directories(out);
  auto written = r3lab::metrics::emit_plotdata(metrics, out);
  std::cout << "wrote " << written.size() << " csv file(s) under " << out
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    CliArgs args = parse_args(argc, argv);
    if (args.subcommand == "help") {
      print_usage();
      return kExitOk;
    }
    if (args.subcommand == "run") return cmd_run(args);
    if (args.subcommand == "sweep") return cmd_sweep(args);
    if (args.subcommand == "verify") return cmd_verify();
    if (args.subcommand == "emit-plotdata") return cmd_emit_plotdata(args);
    throw r3lab::env::ConfigError("unknown subcommand '" + args.subcommand +
                                  "'");
  } catch (const r3lab::env::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
