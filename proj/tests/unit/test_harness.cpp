#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "arterial/harness.hpp"
#include "support.hpp"

using namespace arterial;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    static int serial = 0;
    path_ = fs::temp_directory_path() / ("arterial_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" +
                                         std::to_string(++serial));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) { return read_file(p); }

SweepConfig tiny_sweep(const fs::path& out = {}) {
  SweepConfig c;
  c.testbeds = {{"princeton", support::princeton()}};
  c.los_levels = {LosClass::AtoC};
  c.mp_levels = {0.0, 0.3, 0.6};
  c.seeds = {1, 2};
  c.base.warmup = 20.0;
  c.base.duration = 60.0;
  c.output_dir = out;
  return c;
}

MatrixRow row(double mp, ReservedMode mode, std::uint64_t seed, double tt, double delay, std::int64_t served) {
  return MatrixRow{"tb", LosClass::CtoE, mp, mode, mode == ReservedMode::off() ? 0 : 2, seed, delay, served, tt, {}};
}

std::vector<MatrixRow> synthetic_matrix() {
  std::vector<MatrixRow> m;
  for (std::uint64_t seed : {1u, 2u}) {
    const double jitter = seed == 1 ? -1.0 : 1.0;
    m.push_back(row(0.0, ReservedMode::off(), seed, 100.0 + jitter, 50.0, 1000));
    m.push_back(row(0.0, ReservedMode::automatic(), seed, 100.0 + jitter, 50.0, 1000));
    m.push_back(row(1.0, ReservedMode::off(), seed, 90.0 + jitter, 40.0, 1050));
    m.push_back(row(1.0, ReservedMode::automatic(), seed, 85.0 + jitter, 30.0, 1100));
  }
  return m;
}

std::vector<ComparisonRow> eleven_rows() {
  std::vector<MatrixRow> m;
  for (int i = 0; i <= 10; ++i) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const double s = static_cast<double>(seed);
      m.push_back(row(i / 10.0, ReservedMode::off(), seed, 200.0 - 3.0 * i + s, 80.0 - i + 0.5 * s, 2000 + 10 * i));
      m.push_back(row(i / 10.0, ReservedMode::automatic(), seed, 205.0 - 5.0 * i + s, 82.0 - 2 * i, 1990 + 15 * i));
    }
  }
  return compare(m, "tb", LosClass::CtoE);
}

}  // namespace

TEST(MatrixSize, DefaultProtocolCounts) {
  SweepConfig c;
  c.testbeds = {{"princeton", support::princeton()}};
  c.los_levels = {LosClass::AtoC};
  EXPECT_EQ(matrix_size(c), 110u);
  EXPECT_EQ(matrix_cells(c).size(), 110u);
  const auto cells = matrix_cells(c);
  EXPECT_EQ(std::set<CellKey>(cells.begin(), cells.end()).size(), 110u);

  c.mp_levels = {0.0};
  c.seeds = {1};
  c.lane_modes = {ReservedMode::off()};
  EXPECT_EQ(matrix_cells(c).size(), 1u);

  SweepConfig both;
  both.testbeds = {{"princeton", support::princeton()}, {"woodbridge", support::woodbridge()}};
  EXPECT_EQ(matrix_cells(both).size(), 440u);
}

TEST(SweepValidation, RejectsMalformedConfigs) {
  SweepConfig c = tiny_sweep();
  c.mp_levels = {0.5, 0.2};
  EXPECT_THROW(validate(c), Error);
  c.mp_levels = {0.2, 0.2};
  EXPECT_THROW(validate(c), Error);
  c.mp_levels = {0.0, 1.5};
  EXPECT_THROW(validate(c), Error);
  c = tiny_sweep();
  c.seeds.clear();
  EXPECT_THROW(validate(c), Error);
  c = tiny_sweep();
  c.testbeds.clear();
  EXPECT_THROW(validate(c), Error);
  try {
    c = tiny_sweep();
    c.seeds = {3, 3};
    validate(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigInvalid);
  }
}

TEST(ParseSweep, ShippedFiles) {
  const SweepConfig smoke = load_sweep(support::data_dir() / "smoke.sweep");
  EXPECT_EQ(matrix_size(smoke), 12u);
  EXPECT_EQ(smoke.base.duration, 600.0);
  EXPECT_EQ(smoke.output_dir.filename(), "smoke");
  const SweepConfig princeton = load_sweep(support::data_dir() / "princeton.sweep");
  EXPECT_EQ(matrix_size(princeton), 220u);
  const SweepConfig both = load_sweep(support::data_dir() / "both_testbeds.sweep");
  EXPECT_EQ(matrix_size(both), 440u);
}

TEST(ParseSweep, Errors) {
  const std::string tb = "testbed princeton {\n  corridor = princeton.corridor\n}\n";
  auto kind = [&](const std::string& sweep_body) {
    try {
      parse_sweep("sweep {\n" + sweep_body + "}\n" + tb, support::data_dir());
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::IoFailure;
  };
  EXPECT_EQ(kind("  seeds = 1, 2\n  seed_count = 2\n"), ErrorKind::Parse);
  EXPECT_EQ(kind("  lane_modes = off, sometimes\n"), ErrorKind::Parse);
  EXPECT_EQ(kind("  mp_levels = 0.5, 0.1\n"), ErrorKind::ConfigInvalid);
  EXPECT_EQ(kind("  colour = red\n"), ErrorKind::Parse);
  EXPECT_THROW(parse_sweep("sweep {\n}\n", support::data_dir()), Error);
}

TEST(Sweep, RunsEveryCellOnceAndWritesTheMatrix) {
  TempDir dir;
  std::size_t calls = 0;
  SweepOptions opt;
  opt.workers = 2;
  opt.progress = [&](const MatrixRow&, std::size_t, std::size_t total) {
    ++calls;
    EXPECT_EQ(total, 12u);
  };
  const SweepResult r = sweep(tiny_sweep(dir.path()), opt);
  EXPECT_TRUE(r.complete);
  ASSERT_EQ(r.rows.size(), 12u);
  EXPECT_EQ(calls, 12u);
  // off and auto coincide at mp = 0, where the policy reserves nothing
  EXPECT_EQ(r.simulations, 10u);
  std::set<std::tuple<double, std::string, std::uint64_t>> keys;
  for (const auto& row : r.rows) keys.insert({row.mp, to_string(row.reserved_mode), row.seed});
  EXPECT_EQ(keys.size(), 12u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.reserved_count, effective_reserved_count(row.reserved_mode, row.los, row.mp));
  }
  EXPECT_TRUE(r.audit.clean());
  const auto parsed = load_matrix(dir.path() / "matrix.csv");
  EXPECT_EQ(parsed, r.rows);
}

TEST(Sweep, ResumedSweepIsByteIdentical) {
  TempDir a, b;
  const SweepResult whole = sweep(tiny_sweep(a.path()));
  ASSERT_TRUE(whole.complete);

  SweepOptions partial;
  partial.max_new_runs = 4;
  const SweepResult first = sweep(tiny_sweep(b.path()), partial);
  EXPECT_FALSE(first.complete);
  EXPECT_FALSE(fs::exists(b.path() / "matrix.csv"));
  {
    std::ofstream torn(b.path() / "matrix.journal", std::ios::app);
    torn << "princeton,A_to_C,0.6,auto,2,1,12.5";  // interrupted mid-write
  }
  SweepOptions rest;
  rest.workers = 3;
  const SweepResult second = sweep(tiny_sweep(b.path()), rest);
  EXPECT_TRUE(second.complete);
  EXPECT_GT(second.resumed, 0u);
  EXPECT_EQ(slurp(a.path() / "matrix.csv"), slurp(b.path() / "matrix.csv"));

  const SweepResult again = sweep(tiny_sweep(b.path()));
  EXPECT_EQ(again.simulations, 0u);
  EXPECT_EQ(slurp(a.path() / "matrix.csv"), slurp(b.path() / "matrix.csv"));
}

TEST(Sweep, JournalFromADifferentConfigIsRejected) {
  TempDir dir;
  SweepOptions partial;
  partial.max_new_runs = 1;
  sweep(tiny_sweep(dir.path()), partial);
  SweepConfig changed = tiny_sweep(dir.path());
  changed.base.duration = 90.0;
  try {
    sweep(changed);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigInvalid);
  }
}

TEST(Sweep, WorkerCountDoesNotChangeResults) {
  SweepConfig c = tiny_sweep();
  c.mp_levels = {0.0, 0.5};
  SweepOptions one, three;
  three.workers = 3;
  EXPECT_EQ(format_matrix_csv(sweep(c, one).rows), format_matrix_csv(sweep(c, three).rows));
}

TEST(MatrixCsv, RoundTrip) {
  const auto m = synthetic_matrix();
  const std::string text = format_matrix_csv(m);
  EXPECT_TRUE(text.starts_with(kMatrixHeader));
  EXPECT_EQ(parse_matrix_csv(text), m);
  EXPECT_THROW(parse_matrix_csv("bogus\n"), Error);
  EXPECT_THROW(parse_matrix_csv(std::string(kMatrixHeader) + "\ntb,C_to_E,x,off,0,1,1,1,1\n"), Error);
}

TEST(Compare, ReductionsAgainstTheBaseline) {
  const auto rows = compare(synthetic_matrix(), "tb", LosClass::CtoE);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].off_tt_reduction_pct, 0.0);
  EXPECT_EQ(rows[0].off.travel_time.mean, 100.0);
  EXPECT_NEAR(rows[0].off.travel_time.sd, std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(rows[1].treated_tt_reduction_pct, 15.0, 1e-12);
  EXPECT_NEAR(rows[1].off_tt_reduction_pct, 10.0, 1e-12);
  EXPECT_NEAR(rows[1].treated_delay_reduction_pct, 40.0, 1e-12);
  EXPECT_NEAR(rows[1].treated_served_gain_pct, 10.0, 1e-12);
  EXPECT_NEAR(rows[1].paired_tt_diff_pct, 100.0 * (-10.0) / 180.0, 1e-12);
  EXPECT_NEAR(rows[1].paired_served_diff_pct, 100.0 * 100.0 / 2100.0, 1e-12);
  EXPECT_EQ(crossover_mp(rows), 1.0);
}

TEST(Compare, IncompleteSlices) {
  auto kind = [](const std::vector<MatrixRow>& m) {
    try {
      compare(m, "tb", LosClass::CtoE);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::IoFailure;
  };
  auto m = synthetic_matrix();
  m.pop_back();  // mp 1.0 auto seed 2
  EXPECT_EQ(kind(m), ErrorKind::IncompleteMatrix);
  m = synthetic_matrix();
  std::erase_if(m, [](const MatrixRow& r) { return r.mp == 0.0; });
  EXPECT_EQ(kind(m), ErrorKind::IncompleteMatrix);
  m = synthetic_matrix();
  m.push_back(m.front());
  EXPECT_EQ(kind(m), ErrorKind::IncompleteMatrix);
  EXPECT_EQ(kind({}), ErrorKind::IncompleteMatrix);
  std::erase_if(m, [](const MatrixRow& r) { return r.reserved_mode == ReservedMode::automatic() && r.mp == 1.0; });
  EXPECT_EQ(kind(m), ErrorKind::IncompleteMatrix);
}

TEST(Compare, NoCrossoverWhenTreatmentNeverWins) {
  auto m = synthetic_matrix();
  for (auto& r : m) {
    if (r.reserved_mode == ReservedMode::automatic()) r.total_travel_time_vh += 50.0;
  }
  EXPECT_FALSE(crossover_mp(compare(m, "tb", LosClass::CtoE)).has_value());
}

TEST(EmitReport, CsvJsonAndThreeCharts) {
  TempDir dir;
  const auto rows = eleven_rows();
  ASSERT_EQ(rows.size(), 11u);
  const auto files = emit_report(rows, parse_formats("all"), dir.path());
  ASSERT_EQ(files.size(), 5u);
  const std::string csv = slurp(dir.path() / "comparison.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 12);
  int svgs = 0;
  for (const auto& f : files) {
    if (f.extension() == ".svg") {
      ++svgs;
      const std::string svg = slurp(f);
      EXPECT_TRUE(svg.starts_with("<svg") || svg.starts_with("<?xml")) << f;
      EXPECT_NE(svg.find("</svg>"), std::string::npos);
    }
  }
  EXPECT_EQ(svgs, 3);
  EXPECT_TRUE(fs::exists(dir.path() / "comparison_delay.svg"));
  EXPECT_TRUE(fs::exists(dir.path() / "comparison_served.svg"));
  EXPECT_TRUE(fs::exists(dir.path() / "comparison_travel_time.svg"));
  const auto json = nlohmann::json::parse(slurp(dir.path() / "comparison.json"));
  ASSERT_TRUE(json.is_array());
  EXPECT_EQ(json.size(), 11u);
}

TEST(EmitReport, EmptyRowsWriteNothing) {
  TempDir dir;
  EXPECT_THROW(emit_report({}, parse_formats("all"), dir.path()), Error);
  EXPECT_TRUE(fs::is_empty(dir.path()));
}

TEST(EmitReport, UnwritableDirectoryLeavesNoPartialFiles) {
  TempDir dir;
  const fs::path target = dir.path() / "blocked";
  { std::ofstream(target) << "a file, not a directory"; }
  EXPECT_THROW(emit_report(eleven_rows(), parse_formats("csv,svg"), target), Error);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir.path()), fs::directory_iterator{}), 1);
}

TEST(EmitReport, CsvRoundTrip) {
  const auto rows = eleven_rows();
  EXPECT_EQ(parse_comparison_csv(format_comparison_csv(rows)), rows);
}

TEST(EmitReport, FormatSelection) {
  const auto f = parse_formats("csv,svg");
  EXPECT_TRUE(f.csv);
  EXPECT_FALSE(f.json);
  EXPECT_TRUE(f.svg);
  EXPECT_THROW(parse_formats("pdf"), Error);
  EXPECT_THROW(parse_formats(""), Error);
}
