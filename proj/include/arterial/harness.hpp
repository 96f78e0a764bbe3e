#pragma once

// Evaluation matrix: runs every (testbed, demand regime, penetration, lane
// mode, seed) cell, persists results incrementally, and turns the matrix into
// with/without comparisons and report files.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "arterial/corridor.hpp"
#include "arterial/engine.hpp"
#include "arterial/error.hpp"
#include "arterial/reservation.hpp"
#include "arterial/rng.hpp"
#include "arterial/scenario.hpp"
#include "arterial/structured_text.hpp"

namespace arterial {

// ---- configuration -----------------------------------------------------------

struct Testbed {
  std::string name;
  std::shared_ptr<const Corridor> corridor;
};

inline std::vector<double> default_mp_levels() {
  std::vector<double> out;
  for (int i = 0; i <= 10; ++i) out.push_back(i / 10.0);
  return out;
}

struct SweepConfig {
  std::vector<Testbed> testbeds;
  std::vector<double> mp_levels = default_mp_levels();
  std::vector<ReservedMode> lane_modes{ReservedMode::off(), ReservedMode::automatic()};
  std::vector<LosClass> los_levels{LosClass::AtoC, LosClass::CtoE};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::filesystem::path output_dir;  // empty: keep results in memory only
  ScenarioConfig base;               // horizon, demand and behavior settings shared by every run
};

inline void validate(const SweepConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::ConfigInvalid, m); };
  if (c.testbeds.empty()) fail("sweep needs at least one testbed");
  std::set<std::string> names;
  for (const auto& t : c.testbeds) {
    if (!t.corridor) fail("testbed '" + t.name + "' has no corridor");
    if (t.name.empty() || t.name.find_first_of(",\n\"") != std::string::npos) fail("testbed names must be non-empty and free of commas");
    if (!names.insert(t.name).second) fail("duplicate testbed '" + t.name + "'");
  }
  if (c.mp_levels.empty()) fail("mp_levels is empty");
  for (std::size_t i = 0; i < c.mp_levels.size(); ++i) {
    const double mp = c.mp_levels[i];
    if (!(mp >= 0.0 && mp <= 1.0)) fail("mp level " + format_number(mp) + " outside [0, 1]");
    if (i > 0 && !(mp > c.mp_levels[i - 1])) fail("mp_levels must be sorted and unique");
  }
  if (c.lane_modes.empty()) fail("lane_modes is empty");
  for (std::size_t i = 0; i < c.lane_modes.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (c.lane_modes[i] == c.lane_modes[j]) fail("duplicate lane mode '" + to_string(c.lane_modes[i]) + "'");
    }
  }
  if (c.los_levels.empty()) fail("los_levels is empty");
  if (c.los_levels.size() == 2 && c.los_levels[0] == c.los_levels[1]) fail("duplicate LOS level");
  if (c.seeds.empty()) fail("at least one seed is required");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) fail("duplicate seed");
  ScenarioConfig probe = c.base;
  probe.corridor = c.testbeds.front().corridor;
  validate(probe);
}

/// Total number of matrix cells.
inline std::size_t matrix_size(const SweepConfig& c) {
  return c.testbeds.size() * c.los_levels.size() * c.mp_levels.size() * c.lane_modes.size() * c.seeds.size();
}

/// Reads a sweep file. Testbed corridor paths resolve against `base_dir`.
///
///   sweep {
///     los = A_to_C, C_to_E
///     mp_levels = 0, 0.5, 1
///     lane_modes = off, auto
///     seeds = 1, 2, 3
///     output = results
///     duration = 3600
///   }
///   testbed princeton { corridor = princeton.corridor }
inline SweepConfig parse_sweep(std::string_view text, const std::filesystem::path& base_dir) {
  const Section root = parse_structured(text);
  expect_children(root, {"sweep", "testbed"});
  const Section* s = root.child("sweep");
  if (!s) detail::parse_fail(1, "missing 'sweep { ... }' section");
  expect_keys(*s, {"los", "mp_levels", "lane_modes", "seeds", "seed_count", "output", "warmup", "duration", "dt",
                   "left_turn_fraction", "flow", "advisories"});
  expect_children(*s, {"advisory", "lane_change", "conventional", "automated"});
  SweepConfig c;
  if (const Entry* e = s->find("los")) {
    c.los_levels.clear();
    for (const auto& item : split_list(e->value)) {
      c.los_levels.push_back(detail::wrap_value(*e, [&] { return parse_los(item); }));
    }
  }
  if (const Entry* e = s->find("mp_levels")) {
    c.mp_levels.clear();
    for (const auto& item : split_list(e->value)) c.mp_levels.push_back(parse_double(*e, item));
  }
  if (const Entry* e = s->find("lane_modes")) {
    c.lane_modes.clear();
    for (const auto& item : split_list(e->value)) {
      c.lane_modes.push_back(detail::wrap_value(*e, [&] { return parse_reserved_mode(item); }));
    }
  }
  const Entry* seeds = s->find("seeds");
  const Entry* seed_count = s->find("seed_count");
  if (seeds && seed_count) value_fail(*seed_count, "give either 'seeds' or 'seed_count', not both");
  if (seeds) {
    c.seeds.clear();
    for (const auto& item : split_list(seeds->value)) {
      const auto v = parse_int(*seeds, item);
      if (v < 0) value_fail(*seeds, "seeds must be >= 0");
      c.seeds.push_back(static_cast<std::uint64_t>(v));
    }
  }
  if (seed_count) {
    const auto n = parse_int(*seed_count, seed_count->value);
    if (n < 1) value_fail(*seed_count, "seed_count must be >= 1");
    c.seeds.clear();
    for (std::int64_t i = 1; i <= n; ++i) c.seeds.push_back(static_cast<std::uint64_t>(i));
  }
  if (const Entry* e = s->find("output")) {
    std::filesystem::path out(e->value);
    c.output_dir = out.is_relative() ? base_dir / out : out;
  }
  detail::apply_run_settings(*s, c.base);
  for (const Section* t : root.children_named("testbed")) {
    expect_keys(*t, {"corridor"});
    expect_children(*t, {});
    if (t->label.empty()) detail::parse_fail(t->line, "testbed section needs a name: testbed <name> { ... }");
    const Entry& path = require(*t, "corridor");
    std::filesystem::path cp(path.value);
    if (cp.is_relative()) cp = base_dir / cp;
    c.testbeds.push_back(Testbed{t->label, load_corridor(cp)});
  }
  validate(c);
  return c;
}

inline SweepConfig load_sweep(const std::filesystem::path& path) { return parse_sweep(read_file(path), path.parent_path()); }

// ---- result matrix -------------------------------------------------------------

struct MatrixRow {
  std::string testbed;
  LosClass los = LosClass::AtoC;
  double mp = 0.0;
  ReservedMode reserved_mode;
  int reserved_count = 0;
  std::uint64_t seed = 0;
  double avg_delay_s = 0.0;
  std::int64_t vehicles_served = 0;
  double total_travel_time_vh = 0.0;
  RunAudit audit;  // journaled, not part of the matrix CSV

  bool operator==(const MatrixRow& o) const {
    return testbed == o.testbed && los == o.los && mp == o.mp && reserved_mode == o.reserved_mode &&
           reserved_count == o.reserved_count && seed == o.seed && avg_delay_s == o.avg_delay_s &&
           vehicles_served == o.vehicles_served && total_travel_time_vh == o.total_travel_time_vh;
  }
};

inline constexpr std::string_view kMatrixHeader =
    "testbed,los,mp,reserved_mode,reserved_count,seed,avg_delay_s,vehicles_served,total_travel_time_vh";
inline constexpr std::string_view kAuditColumns =
    "collisions,red_light_violations,reserved_intrusions,speed_violations,teleports,conservation_failures,"
    "subordination_violations,missed_diverges,min_gap,min_delay";

inline std::string format_matrix_row(const MatrixRow& r) {
  std::ostringstream out;
  out << r.testbed << ',' << to_string(r.los) << ',' << format_number(r.mp) << ',' << to_string(r.reserved_mode) << ','
      << r.reserved_count << ',' << r.seed << ',' << format_number(r.avg_delay_s) << ',' << r.vehicles_served << ','
      << format_number(r.total_travel_time_vh);
  return out.str();
}

inline std::string format_audit(const RunAudit& a) {
  std::ostringstream out;
  out << a.collisions << ',' << a.red_light_violations << ',' << a.reserved_intrusions << ',' << a.speed_violations << ','
      << a.teleports << ',' << a.conservation_failures << ',' << a.subordination_violations << ',' << a.missed_diverges
      << ',' << format_number(a.min_gap) << ',' << format_number(a.min_delay);
  return out.str();
}

inline void merge(RunAudit& into, const RunAudit& a) {
  into.collisions += a.collisions;
  into.red_light_violations += a.red_light_violations;
  into.reserved_intrusions += a.reserved_intrusions;
  into.speed_violations += a.speed_violations;
  into.teleports += a.teleports;
  into.conservation_failures += a.conservation_failures;
  into.subordination_violations += a.subordination_violations;
  into.missed_diverges += a.missed_diverges;
  into.min_gap = std::min(into.min_gap, a.min_gap);
  into.min_delay = std::min(into.min_delay, a.min_delay);
}

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.emplace_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline double csv_double(const std::string& s, int line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) parse_fail(line, "expected a number, got '" + s + "'");
  return v;
}

inline std::int64_t csv_int(const std::string& s, int line) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) parse_fail(line, "expected an integer, got '" + s + "'");
  return v;
}

inline std::uint64_t csv_uint(const std::string& s, int line) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) parse_fail(line, "expected an unsigned integer, got '" + s + "'");
  return v;
}

/// Parses the nine matrix columns starting at `f[0]`.
inline MatrixRow matrix_fields(const std::vector<std::string>& f, int line) {
  MatrixRow r;
  r.testbed = f[0];
  try {
    r.los = parse_los(f[1]);
    r.reserved_mode = parse_reserved_mode(f[3]);
  } catch (const Error& e) {
    parse_fail(line, e.what());
  }
  r.mp = csv_double(f[2], line);
  r.reserved_count = static_cast<int>(csv_int(f[4], line));
  r.seed = csv_uint(f[5], line);
  r.avg_delay_s = csv_double(f[6], line);
  r.vehicles_served = csv_int(f[7], line);
  r.total_travel_time_vh = csv_double(f[8], line);
  return r;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    pos = nl + 1;
  }
  return out;
}

/// Writes every file to a sibling temporary first and renames only when all
/// writes succeeded, so a failure leaves none of the targets behind.
inline void write_files_atomically(const std::vector<std::pair<std::filesystem::path, std::string>>& files) {
  namespace fs = std::filesystem;
  std::vector<fs::path> temps;
  std::vector<fs::path> done;
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& p : temps) fs::remove(p, ec);
    for (const auto& p : done) fs::remove(p, ec);
  };
  try {
    for (const auto& [path, content] : files) {
      if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw Error(ErrorKind::IoFailure, "cannot create directory '" + path.parent_path().string() + "': " + ec.message());
      }
      fs::path tmp = path;
      tmp += ".tmp";
      temps.push_back(tmp);
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorKind::IoFailure, "cannot write '" + path.string() + "'");
      out << content;
      out.close();
      if (!out) throw Error(ErrorKind::IoFailure, "write to '" + path.string() + "' failed");
    }
    for (std::size_t i = 0; i < files.size(); ++i) {
      std::error_code ec;
      fs::rename(temps[i], files[i].first, ec);
      if (ec) throw Error(ErrorKind::IoFailure, "cannot move '" + temps[i].string() + "' into place: " + ec.message());
      done.push_back(files[i].first);
    }
  } catch (...) {
    cleanup();
    throw;
  }
}

}  // namespace detail

inline std::string format_matrix_csv(const std::vector<MatrixRow>& rows) {
  std::string out(kMatrixHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += format_matrix_row(r);
    out += '\n';
  }
  return out;
}

inline std::vector<MatrixRow> parse_matrix_csv(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty() || lines[0] != kMatrixHeader) detail::parse_fail(1, "matrix header must be: " + std::string(kMatrixHeader));
  std::vector<MatrixRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const int line = static_cast<int>(i + 1);
    const auto f = detail::split_csv_line(lines[i]);
    if (f.size() != 9) detail::parse_fail(line, "expected 9 columns, got " + std::to_string(f.size()));
    rows.push_back(detail::matrix_fields(f, line));
  }
  return rows;
}

inline std::vector<MatrixRow> load_matrix(const std::filesystem::path& path) {
  try {
    return parse_matrix_csv(read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::IoFailure) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

// ---- sweep -------------------------------------------------------------------

/// Index of a matrix cell; lexicographic order is the canonical row order.
struct CellKey {
  std::size_t testbed = 0;
  std::size_t los = 0;
  std::size_t mp = 0;
  std::size_t mode = 0;
  std::size_t seed = 0;

  auto operator<=>(const CellKey&) const = default;
};

inline std::vector<CellKey> matrix_cells(const SweepConfig& c) {
  std::vector<CellKey> out;
  out.reserve(matrix_size(c));
  for (std::size_t t = 0; t < c.testbeds.size(); ++t)
    for (std::size_t l = 0; l < c.los_levels.size(); ++l)
      for (std::size_t m = 0; m < c.mp_levels.size(); ++m)
        for (std::size_t r = 0; r < c.lane_modes.size(); ++r)
          for (std::size_t s = 0; s < c.seeds.size(); ++s) out.push_back({t, l, m, r, s});
  return out;
}

inline ScenarioConfig scenario_for(const SweepConfig& c, const CellKey& k) {
  ScenarioConfig s = c.base;
  s.corridor = c.testbeds[k.testbed].corridor;
  s.testbed = c.testbeds[k.testbed].name;
  s.los = c.los_levels[k.los];
  s.mp = c.mp_levels[k.mp];
  s.reserved_mode = c.lane_modes[k.mode];
  s.seed = c.seeds[k.seed];
  return s;
}

inline std::string describe(const ScenarioConfig& s) {
  return s.testbed + "/" + to_string(s.los) + "/mp=" + format_number(s.mp) + "/" + to_string(s.reserved_mode) +
         "/seed=" + std::to_string(s.seed);
}

/// Stable digest of everything that influences a run besides the cell itself.
/// A journal written under a different digest is not reused.
inline std::uint64_t sweep_fingerprint(const SweepConfig& c) {
  const ScenarioConfig& b = c.base;
  std::ostringstream d;
  auto params = [&](const DriverParams& p) {
    d << format_number(p.max_accel) << ' ' << format_number(p.comfortable_decel) << ' ' << format_number(p.min_gap) << ' '
      << format_number(p.headway) << ' ' << format_number(p.startup_lost_time) << ';';
  };
  d << format_number(b.warmup) << ' ' << format_number(b.duration) << ' ' << format_number(b.dt) << ' '
    << format_number(b.left_turn_fraction) << ' ' << b.advisories_enabled << ' ' << format_number(b.conventional_speed_spread) << ';';
  if (b.flow_override) d << format_number((*b.flow_override)[0]) << ' ' << format_number((*b.flow_override)[1]);
  d << ';';
  const auto& a = b.advisory;
  d << format_number(a.v_min_factor) << ' ' << format_number(a.control_interval) << ' ' << format_number(a.end_margin) << ' '
    << format_number(a.horizon_cycles) << ' ' << format_number(a.transition_accel) << ' ' << format_number(a.transition_decel)
    << ' ' << format_number(a.discharge_per_queued) << ';';
  const auto& l = b.lane_change;
  d << format_number(l.threshold) << ' ' << format_number(l.safe_decel) << ' ' << format_number(l.mandatory_safe_decel) << ' '
    << format_number(l.lookahead) << ' ' << format_number(l.reserved_bias) << ';';
  params(b.conventional);
  params(b.automated);
  for (const auto& t : c.testbeds) d << t.name << '\n' << format_corridor(*t.corridor) << '\n';
  return fnv1a64(d.str());
}

struct SweepOptions {
  unsigned workers = 1;
  std::optional<std::size_t> max_new_runs;  // stop after this many simulations (for staged execution)
  std::function<void(const MatrixRow&, std::size_t done, std::size_t total)> progress;
};

struct SweepResult {
  std::vector<MatrixRow> rows;  // canonical order; complete only when `complete`
  bool complete = false;
  std::size_t simulations = 0;  // runs executed by this call
  std::size_t resumed = 0;      // rows taken from the journal
  RunAudit audit;               // merged over all rows present
};

inline constexpr std::string_view kJournalName = "matrix.journal";
inline constexpr std::string_view kMatrixName = "matrix.csv";

namespace detail {

struct Journal {
  std::filesystem::path path;
  std::ofstream out;
  std::mutex mutex;

  void append(const MatrixRow& r) {
    std::lock_guard lock(mutex);
    out << format_matrix_row(r) << ',' << format_audit(r.audit) << '\n';
    out.flush();
    if (!out) throw Error(ErrorKind::IoFailure, "cannot append to '" + path.string() + "'");
  }
};

inline std::string journal_preamble(std::uint64_t fingerprint) {
  return "# sweep " + std::to_string(fingerprint) + "\n" + std::string(kMatrixHeader) + "," + std::string(kAuditColumns) + "\n";
}

/// Rows recorded by an earlier, possibly interrupted, invocation. A torn last
/// line (no trailing newline) is discarded.
inline std::vector<MatrixRow> read_journal(const std::filesystem::path& path, std::uint64_t fingerprint) {
  const std::string text = read_file(path);
  const std::string preamble = journal_preamble(fingerprint);
  if (!text.starts_with(preamble)) {
    throw Error(ErrorKind::ConfigInvalid, "'" + path.string() +
                                              "' was written by a different sweep configuration; remove it or choose "
                                              "another output directory");
  }
  std::vector<MatrixRow> rows;
  std::string_view rest(text);
  rest.remove_prefix(preamble.size());
  int line = 3;
  while (!rest.empty()) {
    const auto nl = rest.find('\n');
    if (nl == std::string_view::npos) break;
    const auto f = split_csv_line(rest.substr(0, nl));
    if (f.size() != 19) parse_fail(line, "journal row has " + std::to_string(f.size()) + " columns");
    MatrixRow r = matrix_fields(f, line);
    auto& a = r.audit;
    a.collisions = csv_int(f[9], line);
    a.red_light_violations = csv_int(f[10], line);
    a.reserved_intrusions = csv_int(f[11], line);
    a.speed_violations = csv_int(f[12], line);
    a.teleports = csv_int(f[13], line);
    a.conservation_failures = csv_int(f[14], line);
    a.subordination_violations = csv_int(f[15], line);
    a.missed_diverges = csv_int(f[16], line);
    a.min_gap = csv_double(f[17], line);
    a.min_delay = csv_double(f[18], line);
    rows.push_back(std::move(r));
    rest.remove_prefix(nl + 1);
    ++line;
  }
  return rows;
}

}  // namespace detail

/// Runs every missing cell of the matrix. With an output directory, each
/// finished row is appended to a journal so an interrupted sweep resumes where
/// it stopped, and matrix.csv is written once the matrix is complete.
///
/// Cells whose lane mode resolves to the same reserved-lane count (for example
/// off and auto below the reservation threshold) describe the same simulation;
/// it is executed once and recorded under each mode.
inline SweepResult sweep(const SweepConfig& config, const SweepOptions& options = {}) {
  validate(config);
  namespace fs = std::filesystem;
  const auto cells = matrix_cells(config);
  std::vector<std::optional<MatrixRow>> slots(cells.size());
  SweepResult result;

  std::unique_ptr<detail::Journal> journal;
  if (!config.output_dir.empty()) {
    const std::uint64_t fp = sweep_fingerprint(config);
    const fs::path jpath = config.output_dir / kJournalName;
    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    if (ec) throw Error(ErrorKind::IoFailure, "cannot create '" + config.output_dir.string() + "': " + ec.message());
    std::map<std::tuple<std::string, int, double, std::string, std::uint64_t>, MatrixRow> previous;
    if (fs::exists(jpath)) {
      for (auto& r : detail::read_journal(jpath, fp)) {
        previous.insert_or_assign({r.testbed, static_cast<int>(r.los), r.mp, to_string(r.reserved_mode), r.seed}, r);
      }
      // drop a row torn by an interruption so new rows start on a fresh line
      const std::string text = read_file(jpath);
      if (!text.empty() && text.back() != '\n') fs::resize_file(jpath, text.rfind('\n') + 1);
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const ScenarioConfig s = scenario_for(config, cells[i]);
      auto it = previous.find({s.testbed, static_cast<int>(s.los), s.mp, to_string(s.reserved_mode), s.seed});
      if (it != previous.end()) {
        slots[i] = it->second;
        ++result.resumed;
      }
    }
    journal = std::make_unique<detail::Journal>();
    journal->path = jpath;
    const bool fresh = !fs::exists(jpath);
    journal->out.open(jpath, std::ios::binary | std::ios::app);
    if (!journal->out) throw Error(ErrorKind::IoFailure, "cannot open '" + jpath.string() + "'");
    if (fresh) {
      journal->out << detail::journal_preamble(fp);
      journal->out.flush();
    }
  }

  // Group missing cells by the simulation they need.
  struct Work {
    CellKey representative;
    int reserved = 0;
    std::vector<std::size_t> cells;
  };
  std::vector<Work> work;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, int, std::size_t>, std::size_t> by_run;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (slots[i]) continue;
    const CellKey& k = cells[i];
    const int reserved = effective_reserved_count(config.lane_modes[k.mode], config.los_levels[k.los], config.mp_levels[k.mp]);
    const auto key = std::make_tuple(k.testbed, k.los, k.mp, reserved, k.seed);
    auto [it, inserted] = by_run.try_emplace(key, work.size());
    if (inserted) work.push_back(Work{k, reserved, {}});
    work[it->second].cells.push_back(i);
  }
  const std::size_t budget = options.max_new_runs ? std::min(*options.max_new_runs, work.size()) : work.size();

  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex mutex;
  std::optional<Error> failure;
  std::size_t done = result.resumed;

  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t w = next.fetch_add(1);
      if (w >= budget) return;
      const ScenarioConfig scenario = scenario_for(config, work[w].representative);
      try {
        const RunResult run_result = run(scenario);
        for (std::size_t i : work[w].cells) {
          const ScenarioConfig cell = scenario_for(config, cells[i]);
          MatrixRow row{cell.testbed,
                        cell.los,
                        cell.mp,
                        cell.reserved_mode,
                        run_result.reserved_count,
                        cell.seed,
                        run_result.metrics.avg_delay_per_vehicle,
                        run_result.metrics.vehicles_served,
                        run_result.metrics.total_travel_time,
                        run_result.audit};
          if (journal) journal->append(row);
          std::lock_guard lock(mutex);
          slots[i] = row;
          ++done;
          if (options.progress) options.progress(row, done, cells.size());
        }
      } catch (const Error& e) {
        std::lock_guard lock(mutex);
        if (!failure) failure = Error(e.kind(), describe(scenario) + ": " + e.what());
        stop = true;
      } catch (const std::exception& e) {
        std::lock_guard lock(mutex);
        if (!failure) failure = Error(ErrorKind::IoFailure, describe(scenario) + ": " + e.what());
        stop = true;
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(options.workers, static_cast<unsigned>(std::max<std::size_t>(budget, 1))));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  if (failure) throw *failure;
  result.simulations = budget;

  result.complete = std::all_of(slots.begin(), slots.end(), [](const auto& s) { return s.has_value(); });
  for (auto& s : slots) {
    if (!s) continue;
    merge(result.audit, s->audit);
    result.rows.push_back(std::move(*s));
  }
  if (result.complete && !config.output_dir.empty()) {
    detail::write_files_atomically({{config.output_dir / kMatrixName, format_matrix_csv(result.rows)}});
  }
  return result;
}

// ---- comparison ----------------------------------------------------------------

struct MetricStats {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation over seeds; 0 for a single seed

  bool operator==(const MetricStats&) const = default;
};

struct ModeStats {
  MetricStats delay;
  MetricStats served;
  MetricStats travel_time;

  bool operator==(const ModeStats&) const = default;
};

struct ComparisonRow {
  std::string testbed;
  LosClass los = LosClass::AtoC;
  double mp = 0.0;
  ReservedMode treatment = ReservedMode::automatic();
  ModeStats off;
  ModeStats treated;
  // percent reduction of mean travel time / delay against (mp = 0, off); positive is better
  double off_tt_reduction_pct = 0.0;
  double treated_tt_reduction_pct = 0.0;
  double off_delay_reduction_pct = 0.0;
  double treated_delay_reduction_pct = 0.0;
  // percent increase of mean vehicles served against (mp = 0, off)
  double off_served_gain_pct = 0.0;
  double treated_served_gain_pct = 0.0;
  // treated relative to off at this mp over identical seeds; negative travel time means the treatment helps
  double paired_tt_diff_pct = 0.0;
  double paired_delay_diff_pct = 0.0;
  double paired_served_diff_pct = 0.0;

  bool operator==(const ComparisonRow&) const = default;
};

inline MetricStats stats_of(const std::vector<double>& xs) {
  MetricStats s;
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

/// Reduction of `value` relative to `base`, in percent.
inline double reduction_pct(double base, double value) { return base == 0.0 ? 0.0 : 100.0 * (base - value) / base; }

/// With/without comparison for one (testbed, regime) slice of the matrix.
inline std::vector<ComparisonRow> compare(const std::vector<MatrixRow>& matrix, const std::string& testbed, LosClass los,
                                          ReservedMode treatment = ReservedMode::automatic()) {
  auto incomplete = [&](const std::string& m) {
    throw Error(ErrorKind::IncompleteMatrix, testbed + "/" + to_string(los) + ": " + m);
  };
  if (treatment == ReservedMode::off()) incomplete("the treatment mode must differ from off");
  // mp -> mode (0 off, 1 treated) -> seed -> row
  std::map<double, std::array<std::map<std::uint64_t, const MatrixRow*>, 2>> slice;
  for (const auto& r : matrix) {
    if (r.testbed != testbed || r.los != los) continue;
    int m = -1;
    if (r.reserved_mode == ReservedMode::off()) m = 0;
    else if (r.reserved_mode == treatment) m = 1;
    if (m < 0) continue;
    auto& bucket = slice[r.mp][static_cast<std::size_t>(m)];
    if (!bucket.emplace(r.seed, &r).second) {
      incomplete("duplicate row for mp=" + format_number(r.mp) + ", mode " + to_string(r.reserved_mode) + ", seed " +
                 std::to_string(r.seed));
    }
  }
  if (slice.empty()) incomplete("no rows");
  for (const auto& [mp, modes] : slice) {
    if (modes[0].empty()) incomplete("mode off missing at mp=" + format_number(mp));
    if (modes[1].empty()) incomplete("mode " + to_string(treatment) + " missing at mp=" + format_number(mp));
    std::set<std::uint64_t> a;
    std::set<std::uint64_t> b;
    for (const auto& [seed, _] : modes[0]) a.insert(seed);
    for (const auto& [seed, _] : modes[1]) b.insert(seed);
    if (a != b) incomplete("seed sets of the two modes differ at mp=" + format_number(mp));
  }
  if (slice.begin()->first != 0.0) incomplete("baseline mp=0 is missing");

  auto mode_stats = [](const std::map<std::uint64_t, const MatrixRow*>& rows) {
    std::vector<double> d, s, t;
    for (const auto& [_, r] : rows) {
      d.push_back(r->avg_delay_s);
      s.push_back(static_cast<double>(r->vehicles_served));
      t.push_back(r->total_travel_time_vh);
    }
    return ModeStats{stats_of(d), stats_of(s), stats_of(t)};
  };
  const ModeStats base = mode_stats(slice.begin()->second[0]);

  std::vector<ComparisonRow> out;
  for (const auto& [mp, modes] : slice) {
    ComparisonRow row;
    row.testbed = testbed;
    row.los = los;
    row.mp = mp;
    row.treatment = treatment;
    row.off = mode_stats(modes[0]);
    row.treated = mode_stats(modes[1]);
    row.off_tt_reduction_pct = reduction_pct(base.travel_time.mean, row.off.travel_time.mean);
    row.treated_tt_reduction_pct = reduction_pct(base.travel_time.mean, row.treated.travel_time.mean);
    row.off_delay_reduction_pct = reduction_pct(base.delay.mean, row.off.delay.mean);
    row.treated_delay_reduction_pct = reduction_pct(base.delay.mean, row.treated.delay.mean);
    row.off_served_gain_pct = -reduction_pct(base.served.mean, row.off.served.mean);
    row.treated_served_gain_pct = -reduction_pct(base.served.mean, row.treated.served.mean);
    double tt_off = 0, tt_diff = 0, d_off = 0, d_diff = 0, s_off = 0, s_diff = 0;
    for (const auto& [seed, off_row] : modes[0]) {
      const MatrixRow* t = modes[1].at(seed);
      tt_off += off_row->total_travel_time_vh;
      tt_diff += t->total_travel_time_vh - off_row->total_travel_time_vh;
      d_off += off_row->avg_delay_s;
      d_diff += t->avg_delay_s - off_row->avg_delay_s;
      s_off += static_cast<double>(off_row->vehicles_served);
      s_diff += static_cast<double>(t->vehicles_served - off_row->vehicles_served);
    }
    row.paired_tt_diff_pct = tt_off == 0.0 ? 0.0 : 100.0 * tt_diff / tt_off;
    row.paired_delay_diff_pct = d_off == 0.0 ? 0.0 : 100.0 * d_diff / d_off;
    row.paired_served_diff_pct = s_off == 0.0 ? 0.0 : 100.0 * s_diff / s_off;
    out.push_back(std::move(row));
  }
  return out;
}

/// Smallest mp at which the treated mode's mean travel time beats off.
inline std::optional<double> crossover_mp(const std::vector<ComparisonRow>& rows) {
  for (const auto& r : rows) {
    if (r.treated.travel_time.mean < r.off.travel_time.mean) return r.mp;
  }
  return std::nullopt;
}

// ---- reports -------------------------------------------------------------------

inline const std::vector<std::string>& comparison_columns() {
  static const std::vector<std::string> cols{
      "testbed", "los", "mp", "treatment",
      "off_delay_mean", "off_delay_sd", "off_served_mean", "off_served_sd", "off_tt_mean", "off_tt_sd",
      "treated_delay_mean", "treated_delay_sd", "treated_served_mean", "treated_served_sd", "treated_tt_mean", "treated_tt_sd",
      "off_tt_reduction_pct", "treated_tt_reduction_pct", "off_delay_reduction_pct", "treated_delay_reduction_pct",
      "off_served_gain_pct", "treated_served_gain_pct",
      "paired_tt_diff_pct", "paired_delay_diff_pct", "paired_served_diff_pct"};
  return cols;
}

namespace detail {

inline std::vector<double> numeric_fields(const ComparisonRow& r) {
  return {r.off.delay.mean, r.off.delay.sd, r.off.served.mean, r.off.served.sd, r.off.travel_time.mean, r.off.travel_time.sd,
          r.treated.delay.mean, r.treated.delay.sd, r.treated.served.mean, r.treated.served.sd, r.treated.travel_time.mean,
          r.treated.travel_time.sd, r.off_tt_reduction_pct, r.treated_tt_reduction_pct, r.off_delay_reduction_pct,
          r.treated_delay_reduction_pct, r.off_served_gain_pct, r.treated_served_gain_pct, r.paired_tt_diff_pct,
          r.paired_delay_diff_pct, r.paired_served_diff_pct};
}

inline void assign_numeric_fields(ComparisonRow& r, const std::vector<double>& v) {
  std::size_t i = 0;
  for (MetricStats* m : {&r.off.delay, &r.off.served, &r.off.travel_time, &r.treated.delay, &r.treated.served, &r.treated.travel_time}) {
    m->mean = v[i++];
    m->sd = v[i++];
  }
  for (double* p : {&r.off_tt_reduction_pct, &r.treated_tt_reduction_pct, &r.off_delay_reduction_pct,
                    &r.treated_delay_reduction_pct, &r.off_served_gain_pct, &r.treated_served_gain_pct,
                    &r.paired_tt_diff_pct, &r.paired_delay_diff_pct, &r.paired_served_diff_pct}) {
    *p = v[i++];
  }
}

}  // namespace detail

inline std::string format_comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out;
  const auto& cols = comparison_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += '\n';
  for (const auto& r : rows) {
    out += r.testbed + ',' + to_string(r.los) + ',' + format_number(r.mp) + ',' + to_string(r.treatment);
    for (double v : detail::numeric_fields(r)) out += ',' + format_number(v);
    out += '\n';
  }
  return out;
}

inline std::vector<ComparisonRow> parse_comparison_csv(std::string_view text) {
  const auto lines = detail::split_lines(text);
  const auto& cols = comparison_columns();
  if (lines.empty() || detail::split_csv_line(lines[0]) != cols) detail::parse_fail(1, "unexpected comparison header");
  std::vector<ComparisonRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const int line = static_cast<int>(i + 1);
    const auto f = detail::split_csv_line(lines[i]);
    if (f.size() != cols.size()) detail::parse_fail(line, "expected " + std::to_string(cols.size()) + " columns");
    ComparisonRow r;
    r.testbed = f[0];
    try {
      r.los = parse_los(f[1]);
      r.treatment = parse_reserved_mode(f[3]);
    } catch (const Error& e) {
      detail::parse_fail(line, e.what());
    }
    r.mp = detail::csv_double(f[2], line);
    std::vector<double> v;
    for (std::size_t k = 4; k < f.size(); ++k) v.push_back(detail::csv_double(f[k], line));
    detail::assign_numeric_fields(r, v);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::string format_comparison_json(const std::vector<ComparisonRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  const auto& cols = comparison_columns();
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o[cols[0]] = r.testbed;
    o[cols[1]] = to_string(r.los);
    o[cols[2]] = r.mp;
    o[cols[3]] = to_string(r.treatment);
    const auto v = detail::numeric_fields(r);
    for (std::size_t i = 0; i < v.size(); ++i) o[cols[i + 4]] = v[i];
    arr.push_back(std::move(o));
  }
  return arr.dump(2) + "\n";
}

enum class ReportMetric { Delay, Served, TravelTime };

namespace detail {

inline double nice_step(double range) {
  if (!(range > 0.0)) return 1.0;
  const double raw = range / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (raw <= m * mag) return m * mag;
  }
  return 10.0 * mag;
}

inline std::string fmt(double v, int decimals = 1) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(decimals);
  s << v;
  return s.str();
}

}  // namespace detail

/// Line chart of one metric against mp, one series per lane mode, with
/// +-1 standard deviation error bars.
inline std::string render_svg(const std::vector<ComparisonRow>& rows, ReportMetric metric) {
  constexpr double W = 720, H = 440, L = 80, R = 30, T = 50, B = 60;
  const char* title = metric == ReportMetric::Delay    ? "Average delay per vehicle (s)"
                      : metric == ReportMetric::Served ? "Vehicles served"
                                                       : "Total travel time (veh-h)";
  auto pick = [metric](const ModeStats& m) -> const MetricStats& {
    return metric == ReportMetric::Delay ? m.delay : metric == ReportMetric::Served ? m.served : m.travel_time;
  };
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  double mp_lo = rows.front().mp;
  double mp_hi = rows.back().mp;
  for (const auto& r : rows) {
    for (const ModeStats* m : {&r.off, &r.treated}) {
      lo = std::min(lo, pick(*m).mean - pick(*m).sd);
      hi = std::max(hi, pick(*m).mean + pick(*m).sd);
    }
  }
  if (mp_hi <= mp_lo) mp_hi = mp_lo + 1.0;
  const double step = detail::nice_step(hi - lo);
  double y0 = std::floor(lo / step) * step;
  double y1 = std::ceil(hi / step) * step;
  if (y1 <= y0) y1 = y0 + step;
  const int decimals = step >= 1.0 ? 0 : 2;
  auto px = [&](double mp) { return L + (mp - mp_lo) / (mp_hi - mp_lo) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << " - " << rows.front().testbed
    << ", " << to_string(rows.front().los) << "</text>\n";
  for (double y = y0; y <= y1 + step * 1e-6; y += step) {
    s << "<line x1=\"" << L << "\" y1=\"" << py(y) << "\" x2=\"" << W - R << "\" y2=\"" << py(y) << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << detail::fmt(y, decimals) << "</text>\n";
  }
  for (const auto& r : rows) {
    s << "<text x=\"" << px(r.mp) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << detail::fmt(r.mp, 1) << "</text>\n";
  }
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">market penetration</text>\n";

  const std::string treated_name = "reserved lanes: " + to_string(rows.front().treatment);
  const std::array<std::tuple<const char*, std::string, bool>, 2> series{
      std::tuple{"#1f77b4", std::string("reserved lanes: off"), false}, std::tuple{"#d62728", treated_name, true}};
  int legend = 0;
  for (const auto& [color, name, treated] : series) {
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& r : rows) s << px(r.mp) << ',' << py(pick(treated ? r.treated : r.off).mean) << ' ';
    s << "\"/>\n";
    for (const auto& r : rows) {
      const MetricStats& m = pick(treated ? r.treated : r.off);
      const double x = px(r.mp);
      s << "<line x1=\"" << x << "\" y1=\"" << py(m.mean - m.sd) << "\" x2=\"" << x << "\" y2=\"" << py(m.mean + m.sd)
        << "\" stroke=\"" << color << "\"/>\n";
      for (double e : {m.mean - m.sd, m.mean + m.sd}) {
        s << "<line x1=\"" << x - 4 << "\" y1=\"" << py(e) << "\" x2=\"" << x + 4 << "\" y2=\"" << py(e) << "\" stroke=\"" << color
          << "\"/>\n";
      }
      s << "<circle cx=\"" << x << "\" cy=\"" << py(m.mean) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = T + 8 + 18 * legend++;
    s << "<line x1=\"" << W - R - 190 << "\" y1=\"" << ly << "\" x2=\"" << W - R - 170 << "\" y2=\"" << ly << "\" stroke=\"" << color
      << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - R - 164 << "\" y=\"" << ly + 4 << "\">" << name << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

struct ReportFormats {
  bool csv = true;
  bool json = false;
  bool svg = false;
};

/// "csv,json,svg" or any subset; "all" selects everything.
inline ReportFormats parse_formats(std::string_view list) {
  ReportFormats f{false, false, false};
  for (const auto& item : split_list(list)) {
    if (item == "csv") f.csv = true;
    else if (item == "json") f.json = true;
    else if (item == "svg") f.svg = true;
    else if (item == "all") f = {true, true, true};
    else throw Error(ErrorKind::ConfigInvalid, "unknown format '" + item + "' (csv, json, svg, all)");
  }
  if (!f.csv && !f.json && !f.svg) throw Error(ErrorKind::ConfigInvalid, "no output format selected");
  return f;
}

/// Writes the requested report files into `dir` and returns their paths. Either
/// every file is written or none is.
inline std::vector<std::filesystem::path> emit_report(const std::vector<ComparisonRow>& rows, const ReportFormats& formats,
                                                      const std::filesystem::path& dir,
                                                      const std::string& stem = "comparison") {
  if (rows.empty()) throw Error(ErrorKind::IoFailure, "no comparison rows to report");
  std::vector<std::pair<std::filesystem::path, std::string>> files;
  if (formats.csv) files.emplace_back(dir / (stem + ".csv"), format_comparison_csv(rows));
  if (formats.json) files.emplace_back(dir / (stem + ".json"), format_comparison_json(rows));
  if (formats.svg) {
    files.emplace_back(dir / (stem + "_delay.svg"), render_svg(rows, ReportMetric::Delay));
    files.emplace_back(dir / (stem + "_served.svg"), render_svg(rows, ReportMetric::Served));
    files.emplace_back(dir / (stem + "_travel_time.svg"), render_svg(rows, ReportMetric::TravelTime));
  }
  detail::write_files_atomically(files);
  std::vector<std::filesystem::path> out;
  for (const auto& [p, _] : files) out.push_back(p);
  return out;
}

}  // namespace arterial
