// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "arterial/engine.hpp"
#include "arterial/harness.hpp"
#include "arterial/reservation.hpp"
#include "arterial/toad.hpp"
#include "oracles/advisory_oracle.hpp"
#include "support.hpp"

using namespace arterial;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr int kOracleInstances = 10000;
constexpr double kOracleSpeedTolerance = 0.1;          // m/s
constexpr double kMinUncongestedTtReduction = 8.0;     // %, mp 1.0 vs mp 0.0
constexpr int kMinBenefitLevelsAtOrBelow = 4;          // majority of the six levels 0.3..0.8
constexpr int kMinBenefitLevelsStrict = 3;
constexpr double kMaxAutoPenaltyCongested = 2.0;       // %, auto vs off
constexpr double kMinCongestedServedGain = 4.0;        // %, mp 1.0 vs mp 0.0
constexpr double kFreeFlowTimeTolerance = 2.0;         // s
constexpr double kFreeFlowDelayTolerance = 1.0;        // s
constexpr std::size_t kProtocolRows = 110;

// Reserved-lane grid over mp = 0.0, 0.1, ..., 1.0, written out by hand.
constexpr int kGridUncongested[11] = {0, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2};
constexpr int kGridCongested[11] = {0, 0, 0, 0, 0, 0, 0, 2, 2, 2, 2};

struct Verdict {
  int id;
  std::string title;
  bool pass;
  std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
  verdicts.push_back({id, title, pass, detail});
  std::printf("[%s] %2d %s: %s\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int decimals = 2) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(decimals);
  o << v;
  return o.str();
}

void progress(const std::string& what) {
  std::fprintf(stderr, "... %s\n", what.c_str());
  std::fflush(stderr);
}

unsigned worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

SweepConfig princeton_sweep(LosClass los, std::vector<ReservedMode> modes, std::vector<double> mp_levels,
                            const fs::path& out) {
  SweepConfig c;
  c.testbeds = {{"princeton", support::princeton()}};
  c.los_levels = {los};
  c.lane_modes = std::move(modes);
  c.mp_levels = std::move(mp_levels);
  c.output_dir = out;
  return c;
}

SweepResult run_sweep(const SweepConfig& c, std::optional<std::size_t> max_runs = std::nullopt) {
  SweepOptions opt;
  opt.workers = worker_count();
  opt.max_new_runs = max_runs;
  std::size_t last = 0;
  const auto t0 = std::chrono::steady_clock::now();
  opt.progress = [&](const MatrixRow&, std::size_t done, std::size_t total) {
    if (done - last >= 10 || done == total) {
      last = done;
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      progress(std::to_string(done) + "/" + std::to_string(total) + " cells, " + fmt(s, 0) + " s");
    }
  };
  return sweep(c, opt);
}

const ComparisonRow& at(const std::vector<ComparisonRow>& rows, double mp) {
  for (const auto& r : rows) {
    if (std::abs(r.mp - mp) < 1e-9) return r;
  }
  throw Error(ErrorKind::IncompleteMatrix, "no comparison row at mp=" + format_number(mp));
}

void print_table(const std::string& title, const std::vector<ComparisonRow>& rows) {
  std::printf("\n%s\n", title.c_str());
  std::printf("  %4s  %10s %10s %8s  %8s %8s  %8s %8s  %8s\n", "mp", "tt_off", "tt_treat", "diff%", "red_off%",
              "red_trt%", "srv_off", "srv_trt", "delay_off");
  for (const auto& r : rows) {
    std::printf("  %4.1f  %10.2f %10.2f %8.2f  %8.2f %8.2f  %8.1f %8.1f  %8.1f\n", r.mp, r.off.travel_time.mean,
                r.treated.travel_time.mean, r.paired_tt_diff_pct, r.off_tt_reduction_pct, r.treated_tt_reduction_pct,
                r.off.served.mean, r.treated.served.mean, r.off.delay.mean);
  }
  std::printf("\n");
  std::fflush(stdout);
}

// ---- 1 ----------------------------------------------------------------------

void policy_table() {
  int matches = 0;
  for (int i = 0; i <= 10; ++i) {
    const double mp = i / 10.0;
    matches += recommended_reserved_lanes(LosClass::AtoC, mp) == kGridUncongested[i];
    matches += recommended_reserved_lanes(LosClass::CtoE, mp) == kGridCongested[i];
  }
  report(1, "policy table exactness", matches == 22, std::to_string(matches) + "/22 cells match");
}

// ---- 2 ----------------------------------------------------------------------

void advisory_oracle() {
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int verdict_mismatch = 0;
  int feasible = 0;
  double worst = 0.0;
  for (int i = 0; i < kOracleInstances; ++i) {
    const double cycle = 60.0 + 90.0 * u(rng);
    const double green = cycle * (0.2 + 0.5 * u(rng));
    const double yellow = 3.0 + 2.0 * u(rng);
    const SignalPlan plan(cycle, cycle * u(rng),
                          {{SignalState::Green, green}, {SignalState::Yellow, yellow}, {SignalState::Red, cycle - green - yellow}});
    const double v_max = 11.0 + 14.0 * u(rng);
    const double v_min = 0.3 * v_max;
    const double distance = 20.0 + 1480.0 * u(rng);
    const double speed = v_max * u(rng);
    const double now = 2000.0 * u(rng);
    const double queue_delay = u(rng) < 0.3 ? 2.0 * static_cast<double>(rng() % 6) : 0.0;
    const auto got = plan_advisory(distance, speed, v_min, v_max, plan, now, {}, queue_delay);
    const auto want = oracle::best_speed(distance, speed, v_min, v_max, plan, now, queue_delay);
    if (got.feasible != want.feasible) ++verdict_mismatch;
    if (want.feasible) {
      ++feasible;
      worst = std::max(worst, std::abs(got.target_speed - want.speed));
    }
  }
  report(2, "advisory oracle equivalence", verdict_mismatch == 0 && worst <= kOracleSpeedTolerance,
         std::to_string(kOracleInstances) + " instances (" + std::to_string(feasible) + " feasible), " +
             std::to_string(verdict_mismatch) + " feasibility mismatches, max speed error " + fmt(worst, 4) + " m/s");
}

// ---- 10 ---------------------------------------------------------------------

void free_flow() {
  CorridorSpec spec = to_spec(*support::princeton());
  for (auto& x : spec.intersections) x.intervals = {{SignalState::Green, x.cycle}};
  const auto corridor = std::make_shared<const Corridor>(build_corridor(spec));
  World w(support::empty_scenario(corridor, 400.0));
  const double limit = corridor->links.front().speed_limit;
  w.insert_vehicle(support::vehicle(1, VehicleClass::Conventional, 0, 1, 0.0, limit, limit));
  while (!w.finished()) w.step();
  const RunMetrics m = w.metrics();
  const double tt = m.total_travel_time * 3600.0;
  const double expected = corridor->length(0) / limit;
  const bool pass = m.vehicles_served == 1 && std::abs(tt - expected) <= kFreeFlowTimeTolerance &&
                    std::abs(m.avg_delay_per_vehicle) <= kFreeFlowDelayTolerance;
  report(10, "free-flow sanity", pass,
         "travel time " + fmt(tt) + " s vs " + fmt(expected) + " s, delay " + fmt(m.avg_delay_per_vehicle, 3) + " s");
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::remove_all(work);
  fs::create_directories(work);
  std::printf("acceptance work directory: %s (%u workers)\n", work.string().c_str(), worker_count());

  try {
    policy_table();
    advisory_oracle();
    free_flow();

    // Uncongested protocol sweep, interrupted after a third of its runs and resumed.
    const SweepConfig uncongested = princeton_sweep(LosClass::AtoC, {ReservedMode::off(), ReservedMode::automatic()},
                                                    default_mp_levels(), work / "princeton_A_to_C");
    progress("uncongested sweep (first stage)");
    const SweepResult stage = run_sweep(uncongested, 35);
    progress("uncongested sweep (resumed)");
    const SweepResult a_to_c = run_sweep(uncongested);

    progress("congested sweep");
    const SweepConfig congested = princeton_sweep(LosClass::CtoE, {ReservedMode::off(), ReservedMode::automatic()},
                                                  default_mp_levels(), work / "princeton_C_to_E");
    const SweepResult c_to_e = run_sweep(congested);

    progress("congested forced single reserved lane");
    const SweepConfig forced_cfg = princeton_sweep(LosClass::CtoE, {ReservedMode::fixed(1)}, {0.0, 0.1, 0.2, 0.3, 0.4},
                                                   work / "princeton_C_to_E_fixed1");
    const SweepResult forced = run_sweep(forced_cfg);

    // ---- 3 ----
    RunAudit audit;
    merge(audit, a_to_c.audit);
    merge(audit, c_to_e.audit);
    merge(audit, forced.audit);
    const std::size_t audited = a_to_c.rows.size() + c_to_e.rows.size() + forced.rows.size();
    report(3, "safety audits", audit.collisions == 0 && audit.red_light_violations == 0 && audit.reserved_intrusions == 0,
           std::to_string(audited) + " runs: " + std::to_string(audit.collisions) + " collisions, " +
               std::to_string(audit.red_light_violations) + " red-light violations, " +
               std::to_string(audit.reserved_intrusions) + " reserved-lane intrusions (min gap " + fmt(audit.min_gap, 3) +
               " m, speed " + std::to_string(audit.speed_violations) + ", teleport " + std::to_string(audit.teleports) +
               ", conservation " + std::to_string(audit.conservation_failures) + ", subordination " +
               std::to_string(audit.subordination_violations) + ")");

    // ---- 4 ----
    {
      progress("determinism reruns");
      bool rerun_identical = true;
      const std::vector<std::size_t> picks{0, 37, 73, 109};
      for (std::size_t i : picks) {
        const MatrixRow& row = a_to_c.rows[i];
        ScenarioConfig s = uncongested.base;
        s.corridor = support::princeton();
        s.testbed = row.testbed;
        s.los = row.los;
        s.mp = row.mp;
        s.reserved_mode = row.reserved_mode;
        s.seed = row.seed;
        const RunResult r = run(s);
        MatrixRow again = row;
        again.avg_delay_s = r.metrics.avg_delay_per_vehicle;
        again.vehicles_served = r.metrics.vehicles_served;
        again.total_travel_time_vh = r.metrics.total_travel_time;
        again.reserved_count = r.reserved_count;
        rerun_identical = rerun_identical && format_matrix_row(again) == format_matrix_row(row);
      }
      // The staged sweep against a fresh uninterrupted one, small enough to run twice.
      progress("resume check on a short sweep");
      SweepConfig small = princeton_sweep(LosClass::CtoE, {ReservedMode::off(), ReservedMode::automatic()},
                                          {0.0, 0.5, 0.7, 1.0}, work / "resume_whole");
      small.seeds = {1, 2};
      small.base.warmup = 120.0;
      small.base.duration = 600.0;
      run_sweep(small);
      const std::string whole = read_file(work / "resume_whole" / "matrix.csv");
      small.output_dir = work / "resume_staged";
      run_sweep(small, 3);
      run_sweep(small, 2);
      run_sweep(small);
      const std::string staged = read_file(work / "resume_staged" / "matrix.csv");
      const bool full_resumed = !stage.complete && stage.simulations == 35 && a_to_c.complete && a_to_c.resumed > 0 &&
                                format_matrix_csv(a_to_c.rows) == read_file(work / "princeton_A_to_C" / "matrix.csv");
      report(4, "determinism", rerun_identical && whole == staged && full_resumed,
             std::to_string(picks.size()) + " reruns " + (rerun_identical ? "bit-identical" : "DIFFER") +
                 "; staged vs uninterrupted matrix " + (whole == staged ? "byte-identical" : "DIFFERS") +
                 "; protocol sweep resumed from " + std::to_string(a_to_c.resumed) + " journaled rows");
    }

    const auto cmp_a = compare(a_to_c.rows, "princeton", LosClass::AtoC);
    const auto cmp_c = compare(c_to_e.rows, "princeton", LosClass::CtoE);
    std::vector<MatrixRow> forced_matrix = forced.rows;
    for (const auto& r : c_to_e.rows) {
      if (r.reserved_mode == ReservedMode::off() && r.mp <= 0.4 + 1e-9) forced_matrix.push_back(r);
    }
    const auto cmp_forced = compare(forced_matrix, "princeton", LosClass::CtoE, ReservedMode::fixed(1));
    print_table("princeton A_to_C: off vs auto (travel time in veh-h)", cmp_a);
    print_table("princeton C_to_E: off vs auto", cmp_c);
    print_table("princeton C_to_E: off vs fixed(1)", cmp_forced);
    emit_report(cmp_a, parse_formats("all"), work / "princeton_A_to_C");
    emit_report(cmp_c, parse_formats("all"), work / "princeton_C_to_E");
    emit_report(cmp_forced, parse_formats("csv,json"), work / "princeton_C_to_E_fixed1");

    // ---- 5 ----
    {
      const auto& full = at(cmp_a, 1.0);
      report(5, "uncongested travel-time reduction at full penetration",
             full.off_tt_reduction_pct >= kMinUncongestedTtReduction &&
                 full.treated_tt_reduction_pct >= kMinUncongestedTtReduction,
             "off " + fmt(full.off_tt_reduction_pct) + "%, auto " + fmt(full.treated_tt_reduction_pct) + "% (need >= " +
                 fmt(kMinUncongestedTtReduction, 1) + "%)");
    }

    // ---- 6 ----
    {
      int at_or_below = 0, strictly = 0;
      std::string cells;
      for (int i = 3; i <= 8; ++i) {
        const auto& r = at(cmp_a, i / 10.0);
        at_or_below += r.treated.travel_time.mean <= r.off.travel_time.mean;
        strictly += r.treated.travel_time.mean < r.off.travel_time.mean;
        cells += (cells.empty() ? "" : ", ") + fmt(r.mp, 1) + ":" + fmt(r.paired_tt_diff_pct, 1) + "%";
      }
      report(6, "uncongested reserved-lane benefit",
             at_or_below >= kMinBenefitLevelsAtOrBelow && strictly >= kMinBenefitLevelsStrict,
             "auto <= off at " + std::to_string(at_or_below) + "/6, < at " + std::to_string(strictly) +
                 "/6 (auto vs off: " + cells + ")");
    }

    // ---- 7 ----
    {
      bool forced_worse = true;
      std::string forced_cells;
      for (const auto& r : cmp_forced) {
        forced_worse = forced_worse && r.treated.travel_time.mean > r.off.travel_time.mean;
        forced_cells += (forced_cells.empty() ? "" : ", ") + fmt(r.mp, 1) + ":+" + fmt(r.paired_tt_diff_pct, 1) + "%";
      }
      double worst = -1e9, worst_mp = 0.0;
      for (const auto& r : cmp_c) {
        const double penalty = 100.0 * (r.treated.travel_time.mean - r.off.travel_time.mean) / r.off.travel_time.mean;
        if (penalty > worst) {
          worst = penalty;
          worst_mp = r.mp;
        }
      }
      report(7, "congested crossover", cmp_forced.size() == 5 && forced_worse && worst <= kMaxAutoPenaltyCongested,
             std::string("fixed(1) worse than off at every mp <= 0.4: ") + (forced_worse ? "yes" : "no") + " (" +
                 forced_cells + "); worst auto penalty " + fmt(worst) + "% at mp " + fmt(worst_mp, 1) + " (limit " +
                 fmt(kMaxAutoPenaltyCongested, 1) + "%)");
    }

    // ---- 8 ----
    {
      const auto& a = at(cmp_a, 1.0);
      const auto& c = at(cmp_c, 1.0);
      const bool pass = c.off_served_gain_pct >= kMinCongestedServedGain &&
                        c.treated_served_gain_pct >= kMinCongestedServedGain &&
                        a.off_served_gain_pct < c.off_served_gain_pct && a.treated_served_gain_pct < c.treated_served_gain_pct;
      report(8, "throughput gain", pass,
             "C_to_E served +" + fmt(c.off_served_gain_pct) + "% off / +" + fmt(c.treated_served_gain_pct) +
                 "% auto; A_to_C +" + fmt(a.off_served_gain_pct) + "% off / +" + fmt(a.treated_served_gain_pct) + "% auto");
    }

    // ---- 9 ----
    {
      const auto& a = at(cmp_a, 1.0);
      const auto& c = at(cmp_c, 1.0);
      const bool pass = c.off_tt_reduction_pct < a.off_tt_reduction_pct && c.treated_tt_reduction_pct < a.treated_tt_reduction_pct;
      report(9, "diminishing congested benefit", pass,
             "travel-time reduction at mp 1.0: C_to_E " + fmt(c.off_tt_reduction_pct) + "% off / " +
                 fmt(c.treated_tt_reduction_pct) + "% auto vs A_to_C " + fmt(a.off_tt_reduction_pct) + "% off / " +
                 fmt(a.treated_tt_reduction_pct) + "% auto");
    }

    // ---- 11 ----
    {
      const auto rows = load_matrix(work / "princeton_A_to_C" / "matrix.csv");
      std::set<std::tuple<double, std::string, std::uint64_t>> keys;
      for (const auto& r : rows) keys.insert({r.mp, to_string(r.reserved_mode), r.seed});
      report(11, "matrix protocol", rows.size() == kProtocolRows && keys.size() == kProtocolRows,
             std::to_string(rows.size()) + " rows, " + std::to_string(keys.size()) + " distinct cells");
    }
  } catch (const Error& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }

  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  int failed = 0;
  std::printf("\nsummary\n");
  for (const auto& v : verdicts) {
    std::printf("[%s] %2d %s\n", v.pass ? "PASS" : "FAIL", v.id, v.title.c_str());
    failed += !v.pass;
  }
  std::printf("%d/%zu criteria pass\n", static_cast<int>(verdicts.size()) - failed, verdicts.size());
  return failed == 0 ? 0 : 1;
}
