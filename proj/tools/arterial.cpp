// Command-line front end: run one scenario, sweep a matrix, compare a matrix
// slice, or lint input files.
//
// Exit codes: 0 success, 1 invalid input, 2 runtime failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "arterial/corridor.hpp"
#include "arterial/engine.hpp"
#include "arterial/error.hpp"
#include "arterial/harness.hpp"
#include "arterial/scenario.hpp"
#include "arterial/structured_text.hpp"

namespace fs = std::filesystem;
using namespace arterial;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::IoFailure:
    case ErrorKind::NonPositiveGap:
    case ErrorKind::OutOfExtent: return kRuntime;
    default: return kInvalid;
  }
}

void write_output(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  detail::write_files_atomically({{fs::path(out), text}});
}

std::string run_json(const ScenarioConfig& cfg, const RunResult& r) {
  nlohmann::ordered_json j;
  j["testbed"] = cfg.testbed;
  j["los"] = to_string(cfg.los);
  j["mp"] = cfg.mp;
  j["reserved_mode"] = to_string(cfg.reserved_mode);
  j["reserved_count"] = r.reserved_count;
  j["seed"] = cfg.seed;
  j["avg_delay_s"] = r.metrics.avg_delay_per_vehicle;
  j["vehicles_served"] = r.metrics.vehicles_served;
  j["total_travel_time_vh"] = r.metrics.total_travel_time;
  j["vehicles_generated"] = r.metrics.vehicles_generated;
  auto& series = j["series"] = nlohmann::ordered_json::array();
  for (const auto& s : r.metrics.series) {
    series.push_back({{"start_s", s.start}, {"served", s.served}, {"avg_delay_s", s.avg_delay},
                      {"total_travel_time_vh", s.total_travel_time}});
  }
  const auto& a = r.audit;
  j["audit"] = {{"collisions", a.collisions},
                {"red_light_violations", a.red_light_violations},
                {"reserved_intrusions", a.reserved_intrusions},
                {"speed_violations", a.speed_violations},
                {"teleports", a.teleports},
                {"conservation_failures", a.conservation_failures},
                {"subordination_violations", a.subordination_violations},
                {"missed_diverges", a.missed_diverges},
                {"min_gap_m", std::isfinite(a.min_gap) ? nlohmann::ordered_json(a.min_gap) : nlohmann::ordered_json()}};
  return j.dump(2) + "\n";
}

std::string slice_dir_name(const std::string& testbed, LosClass los) { return testbed + "_" + to_string(los); }

void print_slice_summary(const std::vector<ComparisonRow>& rows) {
  const auto& first = rows.front();
  std::cout << first.testbed << " " << to_string(first.los) << " (off vs " << to_string(first.treatment) << ")\n";
  std::cout << "  mp    tt_off   tt_treated  red_off%  red_treated%  paired%\n";
  for (const auto& r : rows) {
    char line[160];
    std::snprintf(line, sizeof line, "  %.2f  %8.2f  %10.2f  %8.2f  %12.2f  %7.2f\n", r.mp, r.off.travel_time.mean,
                  r.treated.travel_time.mean, r.off_tt_reduction_pct, r.treated_tt_reduction_pct, r.paired_tt_diff_pct);
    std::cout << line;
  }
  if (const auto x = crossover_mp(rows)) {
    std::cout << "  crossover: treated travel time first below off at mp = " << format_number(*x) << "\n";
  } else {
    std::cout << "  crossover: none\n";
  }
}

std::string detect_kind(const std::string& text) {
  const Section root = parse_structured(text);
  if (root.child("scenario")) return "scenario";
  if (root.child("sweep")) return "sweep";
  if (root.child("corridor")) return "corridor";
  detail::parse_fail(1, "no 'corridor', 'scenario' or 'sweep' section found");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Signalized-arterial microsimulation with speed advisories and reserved lanes"};
  app.require_subcommand(1);

  // run
  auto* run_cmd = app.add_subcommand("run", "Run one scenario file and print its metrics");
  std::string scenario_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "csv";
  run_cmd->add_option("scenario", scenario_path, "Scenario file")->required();
  run_cmd->add_option("--seed", seed, "Override the scenario seed");
  run_cmd->add_option("--out", out, "Output file (default: stdout)");
  run_cmd->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Run an evaluation matrix and write the matrix plus reports");
  std::string sweep_path;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::optional<std::size_t> max_runs;
  std::string sweep_format = "csv,json,svg";
  std::string sweep_out;
  std::optional<std::uint64_t> sweep_seed;
  bool quiet = false;
  sweep_cmd->add_option("config", sweep_path, "Sweep file")->required();
  sweep_cmd->add_option("--workers", workers, "Parallel runs")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--out", sweep_out, "Output directory (overrides the file's 'output')");
  sweep_cmd->add_option("--format", sweep_format, "Report formats: csv,json,svg");
  sweep_cmd->add_option("--seed", sweep_seed, "First seed; seeds become consecutive from here");
  sweep_cmd->add_option("--max-runs", max_runs, "Stop after this many new simulations (resume later)");
  sweep_cmd->add_flag("--quiet", quiet, "No per-run progress");

  // compare
  auto* compare_cmd = app.add_subcommand("compare", "Compare lane modes on one slice of a matrix CSV");
  std::string matrix_path;
  std::string testbed;
  std::string los_name;
  std::string mode_name = "auto";
  std::string compare_out = ".";
  std::string compare_format = "csv";
  compare_cmd->add_option("matrix", matrix_path, "matrix.csv written by sweep")->required();
  compare_cmd->add_option("--testbed", testbed, "Testbed name")->required();
  compare_cmd->add_option("--los", los_name, "A_to_C or C_to_E")->required();
  compare_cmd->add_option("--mode", mode_name, "Treatment lane mode compared against off");
  compare_cmd->add_option("--out", compare_out, "Output directory");
  compare_cmd->add_option("--format", compare_format, "Report formats: csv,json,svg");

  // validate
  auto* validate_cmd = app.add_subcommand("validate", "Check corridor, scenario or sweep files");
  std::vector<std::string> files;
  validate_cmd->add_option("files", files, "Files to check")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalid;
  }

  try {
    if (*run_cmd) {
      ScenarioConfig cfg = load_scenario(scenario_path);
      if (seed) cfg.seed = *seed;
      const RunResult r = run(cfg);
      if (format == "json") {
        write_output(run_json(cfg, r), out);
      } else {
        MatrixRow row{cfg.testbed, cfg.los, cfg.mp, cfg.reserved_mode, r.reserved_count, cfg.seed,
                      r.metrics.avg_delay_per_vehicle, r.metrics.vehicles_served, r.metrics.total_travel_time, r.audit};
        write_output(format_matrix_csv({row}), out);
      }
      if (!r.audit.clean()) {
        std::cerr << "warning: safety audit not clean (collisions " << r.audit.collisions << ", red-light "
                  << r.audit.red_light_violations << ", reserved intrusions " << r.audit.reserved_intrusions << ")\n";
      }
      return kOk;
    }

    if (*sweep_cmd) {
      SweepConfig cfg = load_sweep(sweep_path);
      if (!sweep_out.empty()) cfg.output_dir = sweep_out;
      if (cfg.output_dir.empty()) cfg.output_dir = "sweep_out";
      if (sweep_seed) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) cfg.seeds[i] = *sweep_seed + i;
      }
      const ReportFormats formats = parse_formats(sweep_format);
      SweepOptions options;
      options.workers = workers;
      options.max_new_runs = max_runs;
      if (!quiet) {
        options.progress = [](const MatrixRow& r, std::size_t done, std::size_t total) {
          std::cerr << "[" << done << "/" << total << "] " << r.testbed << " " << to_string(r.los) << " mp="
                    << format_number(r.mp) << " " << to_string(r.reserved_mode) << " seed=" << r.seed
                    << " tt=" << format_number(std::round(r.total_travel_time_vh * 100) / 100) << "\n";
        };
      }
      const SweepResult result = sweep(cfg, options);
      std::cerr << "runs executed: " << result.simulations << ", rows resumed: " << result.resumed << "\n";
      if (!result.complete) {
        std::cerr << "matrix incomplete (" << result.rows.size() << "/" << matrix_size(cfg)
                  << " rows); rerun the same command to resume\n";
        return kOk;
      }
      std::cout << "matrix: " << (cfg.output_dir / kMatrixName).string() << " (" << result.rows.size() << " rows)\n";
      const auto treatment = std::find_if(cfg.lane_modes.begin(), cfg.lane_modes.end(),
                                          [](const ReservedMode& m) { return !(m == ReservedMode::off()); });
      const bool has_off = std::find(cfg.lane_modes.begin(), cfg.lane_modes.end(), ReservedMode::off()) != cfg.lane_modes.end();
      if (treatment != cfg.lane_modes.end() && has_off && cfg.mp_levels.front() == 0.0) {
        for (const auto& tb : cfg.testbeds) {
          for (LosClass los : cfg.los_levels) {
            const auto rows = compare(result.rows, tb.name, los, *treatment);
            for (const auto& p : emit_report(rows, formats, cfg.output_dir / slice_dir_name(tb.name, los))) {
              std::cout << "report: " << p.string() << "\n";
            }
            print_slice_summary(rows);
          }
        }
      }
      if (!result.audit.clean()) {
        std::cerr << "warning: safety audit not clean over the sweep (collisions " << result.audit.collisions
                  << ", red-light " << result.audit.red_light_violations << ", reserved intrusions "
                  << result.audit.reserved_intrusions << ")\n";
      }
      return kOk;
    }

    if (*compare_cmd) {
      const auto matrix = load_matrix(matrix_path);
      const auto rows = compare(matrix, testbed, parse_los(los_name), parse_reserved_mode(mode_name));
      for (const auto& p : emit_report(rows, parse_formats(compare_format), compare_out)) {
        std::cout << "report: " << p.string() << "\n";
      }
      print_slice_summary(rows);
      return kOk;
    }

    if (*validate_cmd) {
      int rc = kOk;
      for (const auto& f : files) {
        try {
          const std::string text = read_file(f);
          const std::string kind = detect_kind(text);
          if (kind == "corridor") {
            const Corridor c = parse_corridor(text);
            std::cout << "ok " << f << " (corridor '" << c.name << "', " << c.intersections.size() << " intersections)\n";
          } else if (kind == "scenario") {
            const ScenarioConfig s = parse_scenario(text, fs::path(f).parent_path());
            std::cout << "ok " << f << " (scenario " << describe(s) << ")\n";
          } else {
            const SweepConfig s = parse_sweep(text, fs::path(f).parent_path());
            std::cout << "ok " << f << " (sweep, " << matrix_size(s) << " runs)\n";
          }
        } catch (const Error& e) {
          std::cerr << f << ": " << e.what() << "\n";
          rc = std::max(rc, exit_code(e.kind()));
        }
      }
      return rc;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
