#include "cavqed/io.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "cavqed/rng.hpp"
#include "cavqed/units.hpp"

namespace cavqed::io {

using nlohmann::json;

namespace {

constexpr char kTimetagMagic[8] = {'C', 'V', 'Q', 'T', 'T', 'A', 'G', '1'};

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string version_string() {
#ifdef CAVQED_VERSION
  return CAVQED_VERSION;
#else
  return "dev";
#endif
}

json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["kind"] = to_string(m.kind);
  j["axis_units"] = m.axis_units;
  j["metadata"] = m.metadata;
  j["truth"] = m.truth;
  if (m.seed) j["seed"] = *m.seed;
  j["source"] = m.source;
  j["tool_version"] = m.tool_version.empty() ? version_string() : m.tool_version;
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("axis_units"))
    m.axis_units = j.at("axis_units").get<std::map<std::string, std::string>>();
  if (j.contains("metadata"))
    m.metadata = j.at("metadata").get<std::map<std::string, double>>();
  if (j.contains("truth")) m.truth = j.at("truth").get<std::map<std::string, double>>();
  if (j.contains("seed")) m.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("source")) m.source = j.at("source").get<std::string>();
  if (j.contains("tool_version")) m.tool_version = j.at("tool_version").get<std::string>();
  return m;
}

void write_manifest_header(std::ostream& out, const DatasetManifest& m) {
  out << "# manifest: " << manifest_to_json(m).dump() << "\n";
}

std::string expected_unit(const DatasetManifest& m, const std::string& axis) {
  auto it = m.axis_units.find(axis);
  return it == m.axis_units.end() ? std::string() : it->second;
}

void check_unit(const DatasetManifest& m, const std::string& axis, const std::string& unit,
                const char* what) {
  const std::string got = expected_unit(m, axis);
  if (got != unit)
    fail(std::string(what) + ": axis '" + axis + "' has unit '" + got + "', expected '" +
         unit + "' (unit-mismatched composition rejected)");
}

}  // namespace

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::timetags: return "timetags";
    case DatasetKind::histogram: return "histogram";
    case DatasetKind::sweep: return "sweep";
    case DatasetKind::spectrum: return "spectrum";
    case DatasetKind::saturation: return "saturation";
    case DatasetKind::detunings: return "detunings";
  }
  fail("unknown dataset kind");
  return {};
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "timetags") return DatasetKind::timetags;
  if (s == "histogram") return DatasetKind::histogram;
  if (s == "sweep") return DatasetKind::sweep;
  if (s == "spectrum") return DatasetKind::spectrum;
  if (s == "saturation") return DatasetKind::saturation;
  if (s == "detunings") return DatasetKind::detunings;
  fail("unknown dataset kind: " + s);
  return DatasetKind::histogram;
}

void DatasetManifest::validate() const {
  auto need_meta = [&](const char* key) {
    if (!metadata.count(key))
      fail("DatasetManifest(" + to_string(kind) + "): missing metadata '" + key + "'");
  };
  auto need_axis = [&](const char* axis) {
    if (!axis_units.count(axis))
      fail("DatasetManifest(" + to_string(kind) + "): missing axis unit '" + axis + "'");
  };
  switch (kind) {
    case DatasetKind::timetags:
      need_axis("t");
      break;
    case DatasetKind::histogram:
      need_axis("x");
      need_axis("y");
      break;
    case DatasetKind::sweep:
      need_meta("sideband_ghz");
      break;
    case DatasetKind::spectrum:
      need_axis("x");
      break;
    case DatasetKind::saturation:
      need_axis("x");
      need_axis("y");
      break;
    case DatasetKind::detunings:
      need_meta("sample_rate_hz");
      need_axis("detuning");
      break;
  }
}

void atomic_write(const std::filesystem::path& path, const std::string& contents) {
  const auto tmp = path.parent_path() /
                   (path.filename().string() + ".tmp" + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail("atomic_write: cannot open " + tmp.string());
    out << contents;
    if (!out) fail("atomic_write: short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_curve_table(const std::filesystem::path& path, const CurveTable& table) {
  std::ostringstream out;
  for (const auto& [k, v] : table.header) out << "# " << k << ": " << v << "\n";
  for (std::size_t i = 0; i < table.columns.size(); ++i)
    out << table.columns[i] << (i + 1 == table.columns.size() ? "\n" : ",");
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) fail("save_curve_table: ragged row");
    for (std::size_t i = 0; i < row.size(); ++i)
      out << fmt_double(row[i]) << (i + 1 == row.size() ? "\n" : ",");
  }
  atomic_write(path, out.str());
}

CurveTable load_curve_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("load_curve_table: cannot open " + path.string());
  CurveTable t;
  std::string line;
  bool have_columns = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string key = line.substr(1, colon - 1);
        std::string val = line.substr(colon + 1);
        auto trim = [](std::string& s) {
          s.erase(0, s.find_first_not_of(" \t"));
          s.erase(s.find_last_not_of(" \t\r") + 1);
        };
        trim(key);
        trim(val);
        t.header[key] = val;
      }
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      cells.push_back(cell);
    }
    if (!have_columns) {
      t.columns = cells;
      have_columns = true;
      continue;
    }
    if (cells.size() != t.columns.size())
      fail("load_curve_table: row " + std::to_string(lineno) + " has " +
           std::to_string(cells.size()) + " cells, expected " +
           std::to_string(t.columns.size()) + " (columns: " + [&] {
             std::string s;
             for (const auto& c : t.columns) s += c + " ";
             return s;
           }());
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      try {
        row.push_back(std::stod(c));
      } catch (const std::exception&) {
        fail("load_curve_table: non-numeric cell '" + c + "' at line " +
             std::to_string(lineno));
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (!have_columns) fail("load_curve_table: no column header in " + path.string());
  return t;
}

namespace {

DatasetManifest manifest_from_table(const CurveTable& t, const char* what) {
  auto it = t.header.find("manifest");
  if (it == t.header.end()) fail(std::string(what) + ": missing manifest header");
  return manifest_from_json(json::parse(it->second));
}

std::size_t column_index(const CurveTable& t, const std::string& name, const char* what) {
  for (std::size_t i = 0; i < t.columns.size(); ++i)
    if (t.columns[i] == name) return i;
  std::string schema;
  for (const auto& c : t.columns) schema += c + " ";
  fail(std::string(what) + ": missing column '" + name + "' (file has: " + schema + ")");
  return 0;
}

}  // namespace

void save_histogram(const std::filesystem::path& path, const TcspcHistogram& h,
                    const DatasetManifest& manifest) {
  h.validate();
  DatasetManifest m = manifest;
  m.kind = DatasetKind::histogram;
  m.axis_units["x"] = "s";
  m.axis_units["y"] = "counts";
  m.metadata["total_events"] = static_cast<double>(h.total_events);
  m.validate();
  CurveTable t;
  t.header["manifest"] = manifest_to_json(m).dump();
  t.columns = {"bin_lo_s", "bin_hi_s", "counts"};
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    t.rows.push_back({h.bin_edges[i], h.bin_edges[i + 1], static_cast<double>(h.counts[i])});
  save_curve_table(path, t);
}

std::pair<TcspcHistogram, DatasetManifest> load_histogram(const std::filesystem::path& path) {
  const CurveTable t = load_curve_table(path);
  const DatasetManifest m = manifest_from_table(t, "load_histogram");
  if (m.kind != DatasetKind::histogram) fail("load_histogram: file is not a histogram");
  check_unit(m, "x", "s", "load_histogram");
  check_unit(m, "y", "counts", "load_histogram");
  const std::size_t lo = column_index(t, "bin_lo_s", "load_histogram");
  const std::size_t hi = column_index(t, "bin_hi_s", "load_histogram");
  const std::size_t ct = column_index(t, "counts", "load_histogram");
  TcspcHistogram h;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (i == 0) h.bin_edges.push_back(t.rows[i][lo]);
    h.bin_edges.push_back(t.rows[i][hi]);
    h.counts.push_back(static_cast<std::uint64_t>(t.rows[i][ct]));
  }
  auto it = m.metadata.find("total_events");
  std::uint64_t declared =
      it != m.metadata.end() ? static_cast<std::uint64_t>(it->second) : 0;
  std::uint64_t sum = 0;
  for (auto c : h.counts) sum += c;
  h.total_events = std::max(declared, sum);
  h.validate();
  return {h, m};
}

void save_detunings(const std::filesystem::path& path, const DetuningSeries& s,
                    double sample_rate_hz, const DatasetManifest& manifest) {
  s.validate();
  DatasetManifest m = manifest;
  m.kind = DatasetKind::detunings;
  m.metadata["sample_rate_hz"] = sample_rate_hz;
  m.axis_units["detuning"] = s.unit == DetuningUnit::picometre ? "pm" : "GHz";
  m.validate();
  CurveTable t;
  t.header["manifest"] = manifest_to_json(m).dump();
  t.columns = {"time_s", "detuning", "quiet"};
  for (std::size_t i = 0; i < s.times.size(); ++i)
    t.rows.push_back({s.times[i], s.detunings[i], s.quiet_mask[i] ? 1.0 : 0.0});
  save_curve_table(path, t);
}

std::tuple<DetuningSeries, double, DatasetManifest> load_detunings(
    const std::filesystem::path& path) {
  const CurveTable t = load_curve_table(path);
  const DatasetManifest m = manifest_from_table(t, "load_detunings");
  if (m.kind != DatasetKind::detunings) fail("load_detunings: wrong dataset kind");
  const std::string unit = expected_unit(m, "detuning");
  if (unit != "pm" && unit != "GHz")
    fail("load_detunings: detuning axis unit must be pm or GHz, got '" + unit + "'");
  DetuningSeries s;
  s.unit = unit == "pm" ? DetuningUnit::picometre : DetuningUnit::gigahertz;
  const std::size_t ti = column_index(t, "time_s", "load_detunings");
  const std::size_t di = column_index(t, "detuning", "load_detunings");
  const std::size_t qi = column_index(t, "quiet", "load_detunings");
  for (const auto& row : t.rows) {
    s.times.push_back(row[ti]);
    s.detunings.push_back(row[di]);
    s.quiet_mask.push_back(row[qi] != 0.0);
  }
  s.validate();
  return {s, m.metadata.at("sample_rate_hz"), m};
}

void save_sweep(const std::filesystem::path& path, std::span<const double> x,
                std::span<const double> y, const DatasetManifest& manifest) {
  if (x.size() != y.size()) fail("save_sweep: size mismatch");
  DatasetManifest m = manifest;
  m.kind = DatasetKind::sweep;
  if (!m.axis_units.count("x")) m.axis_units["x"] = "axis";
  m.validate();
  CurveTable t;
  t.header["manifest"] = manifest_to_json(m).dump();
  t.columns = {"x", "transmission"};
  for (std::size_t i = 0; i < x.size(); ++i) t.rows.push_back({x[i], y[i]});
  save_curve_table(path, t);
}

std::tuple<std::vector<double>, std::vector<double>, DatasetManifest> load_sweep(
    const std::filesystem::path& path) {
  const CurveTable t = load_curve_table(path);
  const DatasetManifest m = manifest_from_table(t, "load_sweep");
  if (m.kind != DatasetKind::sweep) fail("load_sweep: wrong dataset kind");
  const std::size_t xi = column_index(t, "x", "load_sweep");
  const std::size_t yi = column_index(t, "transmission", "load_sweep");
  std::vector<double> x, y;
  for (const auto& row : t.rows) {
    x.push_back(row[xi]);
    y.push_back(row[yi]);
  }
  return {x, y, m};
}

void save_saturation(const std::filesystem::path& path, std::span<const double> power_w,
                     std::span<const double> counts_per_s, const DatasetManifest& manifest) {
  if (power_w.size() != counts_per_s.size()) fail("save_saturation: size mismatch");
  DatasetManifest m = manifest;
  m.kind = DatasetKind::saturation;
  m.axis_units["x"] = "W";
  m.axis_units["y"] = "counts/s";
  m.validate();
  CurveTable t;
  t.header["manifest"] = manifest_to_json(m).dump();
  t.columns = {"power_w", "counts_per_s"};
  for (std::size_t i = 0; i < power_w.size(); ++i)
    t.rows.push_back({power_w[i], counts_per_s[i]});
  save_curve_table(path, t);
}

std::tuple<std::vector<double>, std::vector<double>, DatasetManifest> load_saturation(
    const std::filesystem::path& path) {
  const CurveTable t = load_curve_table(path);
  const DatasetManifest m = manifest_from_table(t, "load_saturation");
  if (m.kind != DatasetKind::saturation) fail("load_saturation: wrong dataset kind");
  check_unit(m, "x", "W", "load_saturation");
  check_unit(m, "y", "counts/s", "load_saturation");
  const std::size_t pi = column_index(t, "power_w", "load_saturation");
  const std::size_t ci = column_index(t, "counts_per_s", "load_saturation");
  std::vector<double> p, c;
  for (const auto& row : t.rows) {
    p.push_back(row[pi]);
    c.push_back(row[ci]);
  }
  return {p, c, m};
}

void save_timetags(const std::filesystem::path& path, const TimeTagStream& stream,
                   const DatasetManifest& manifest) {
  stream.validate();
  DatasetManifest m = manifest;
  m.kind = DatasetKind::timetags;
  m.axis_units["t"] = "ps";
  m.validate();
  std::string blob;
  blob.reserve(16 + stream.records.size() * 9);
  blob.append(kTimetagMagic, 8);
  const std::uint32_t version = 1, reserved = 0;
  blob.append(reinterpret_cast<const char*>(&version), 4);
  blob.append(reinterpret_cast<const char*>(&reserved), 4);
  for (const auto& r : stream.records) {
    blob.append(reinterpret_cast<const char*>(&r.ps), 8);
    blob.push_back(static_cast<char>(r.channel));
  }
  atomic_write(path, blob);
  atomic_write(path.string() + ".manifest.json", manifest_to_json(m).dump(2) + "\n");
}

std::pair<TimeTagStream, DatasetManifest> load_timetags(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_timetags: cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0, reserved = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&reserved), 4);
  if (!in || std::memcmp(magic, kTimetagMagic, 8) != 0)
    fail("load_timetags: bad magic in " + path.string());
  if (version != 1) fail("load_timetags: unsupported version");
  TimeTagStream s;
  char rec[9];
  std::size_t index = 0;
  while (in.read(rec, 9)) {
    TimeTag t;
    std::memcpy(&t.ps, rec, 8);
    t.channel = static_cast<std::uint8_t>(rec[8]);
    s.records.push_back(t);
    ++index;
  }
  if (in.gcount() != 0)
    fail("load_timetags: truncated record " + std::to_string(index) + " in " + path.string());
  s.validate();
  DatasetManifest m;
  const auto mpath = path.string() + ".manifest.json";
  if (std::filesystem::exists(mpath)) {
    std::ifstream mf(mpath);
    json j;
    mf >> j;
    m = manifest_from_json(j);
  } else {
    m.kind = DatasetKind::timetags;
    m.axis_units["t"] = "ps";
  }
  return {s, m};
}

MeasuredValue RunConfig::gamma_ghz() const {
  const double v = 1.0 / (kTwoPi * tau_ns.value);
  return {v, v * tau_ns.sigma / tau_ns.value};
}

namespace {

json mv_to_json(const MeasuredValue& v) { return json::array({v.value, v.sigma}); }

MeasuredValue mv_from_json(const json& j) {
  if (j.is_array() && j.size() == 2) return {j[0].get<double>(), j[1].get<double>()};
  if (j.is_number()) return {j.get<double>(), 0.0};
  fail("config: measured value must be [value, sigma] or a number");
  return {};
}

json config_to_json(const RunConfig& c) {
  json j;
  j["g_ghz"] = mv_to_json(c.g_ghz);
  j["kappa_ghz"] = mv_to_json(c.kappa_ghz);
  j["gamma_star_ghz"] = mv_to_json(c.gamma_star_ghz);
  j["tau_ns"] = mv_to_json(c.tau_ns);
  j["pump_ghz"] = mv_to_json(c.pump_ghz);
  j["sigma_nu_ghz"] = mv_to_json(c.sigma_nu_ghz);
  j["delta_cw_ghz"] = mv_to_json(c.delta_cw_ghz);
  j["kappa_prime_ghz"] = mv_to_json(c.kappa_prime_ghz);
  j["sigma_t_ps"] = mv_to_json(c.sigma_t_ps);
  j["waist_um"] = mv_to_json(c.waist_um);
  j["t_diamond_um"] = mv_to_json(c.t_diamond_um);
  j["t_air_um"] = mv_to_json(c.t_air_um);
  j["roc_um"] = c.roc_um;
  j["n_diamond"] = c.n_diamond;
  j["wavelength_nm"] = c.wavelength_nm;
  j["slope_pm_per_ghz"] = c.slope_pm_per_ghz;
  j["stack_file"] = c.stack_file;
  j["n_mc"] = c.n_mc;
  j["seed"] = c.seed;
  j["fit_rel_tol"] = c.fit_rel_tol;
  return j;
}

}  // namespace

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("load_config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail("load_config: malformed JSON in " + path.string() + ": " + e.what());
  }
  RunConfig c;
  const json defaults = config_to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) fail("load_config: unknown key '" + key + "'");
    if (key == "g_ghz") c.g_ghz = mv_from_json(value);
    else if (key == "kappa_ghz") c.kappa_ghz = mv_from_json(value);
    else if (key == "gamma_star_ghz") c.gamma_star_ghz = mv_from_json(value);
    else if (key == "tau_ns") c.tau_ns = mv_from_json(value);
    else if (key == "pump_ghz") c.pump_ghz = mv_from_json(value);
    else if (key == "sigma_nu_ghz") c.sigma_nu_ghz = mv_from_json(value);
    else if (key == "delta_cw_ghz") c.delta_cw_ghz = mv_from_json(value);
    else if (key == "kappa_prime_ghz") c.kappa_prime_ghz = mv_from_json(value);
    else if (key == "sigma_t_ps") c.sigma_t_ps = mv_from_json(value);
    else if (key == "waist_um") c.waist_um = mv_from_json(value);
    else if (key == "t_diamond_um") c.t_diamond_um = mv_from_json(value);
    else if (key == "t_air_um") c.t_air_um = mv_from_json(value);
    else if (key == "roc_um") c.roc_um = value.get<double>();
    else if (key == "n_diamond") c.n_diamond = value.get<double>();
    else if (key == "wavelength_nm") c.wavelength_nm = value.get<double>();
    else if (key == "slope_pm_per_ghz") c.slope_pm_per_ghz = value.get<double>();
    else if (key == "stack_file") c.stack_file = value.get<std::string>();
    else if (key == "n_mc") c.n_mc = value.get<int>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "fit_rel_tol") c.fit_rel_tol = value.get<double>();
  }
  if (c.tau_ns.value <= 0.0) fail("load_config: tau_ns must be positive");
  if (c.n_mc < 1) fail("load_config: n_mc must be >= 1");
  return c;
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
  atomic_write(path, config_to_json(config).dump(2) + "\n");
}

std::string config_hash(const RunConfig& config) {
  const std::string canon = config_to_json(config).dump();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void ResultFile::set(const std::string& key, double value, double sigma,
                     const std::string& unit) {
  entries[key] = {value, sigma, unit};
}

void save_results(const std::filesystem::path& path, const ResultFile& results) {
  json j;
  for (const auto& [key, entry] : results.entries) {
    j[key] = {{"value", std::get<0>(entry)},
              {"sigma", std::get<1>(entry)},
              {"unit", std::get<2>(entry)}};
  }
  atomic_write(path, j.dump(2) + "\n");
}

ResultFile load_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("load_results: cannot open " + path.string());
  json j;
  in >> j;
  ResultFile r;
  for (const auto& [key, entry] : j.items())
    r.entries[key] = {entry.at("value").get<double>(), entry.at("sigma").get<double>(),
                      entry.at("unit").get<std::string>()};
  return r;
}

void save_run_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  json j;
  j["command"] = manifest.command;
  j["config_hash"] = manifest.config_hash;
  j["seed"] = manifest.seed;
  j["tool_version"] = manifest.tool_version.empty() ? version_string() : manifest.tool_version;
  j["inputs"] = manifest.inputs;
  j["outputs"] = manifest.outputs;
  atomic_write(path, j.dump(2) + "\n");
}

RunManifest load_run_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("load_run_manifest: cannot open " + path.string());
  json j;
  in >> j;
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.tool_version = j.at("tool_version").get<std::string>();
  if (j.contains("inputs")) m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  if (j.contains("outputs"))
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  return m;
}

TcspcHistogram synth_decay_histogram(const RunConfig& config, std::uint64_t events,
                                     std::uint64_t seed, DatasetManifest* manifest) {
  CqedParams p;
  p.g = ghz_to_rad(config.g_ghz.value);
  p.kappa = ghz_to_rad(config.kappa_ghz.value);
  p.gamma = ghz_to_rad(config.gamma_ghz().value);
  p.gamma_star = ghz_to_rad(config.gamma_star_ghz.value);
  const double sigma_t = config.sigma_t_ps.value * 1e-12;

  const double t_lo = -1.5e-9, t_hi = 28.5e-9;
  const double fine_dt = std::min(sigma_t / 10.0, 20e-12);
  std::vector<double> grid;
  for (double t = t_lo; t <= t_hi; t += fine_dt) grid.push_back(t);
  DecayModelOptions opts;
  opts.normalize_peak = false;  // area-normalized density for sampling
  const auto pdf =
      vibration_averaged_decay(p, ghz_to_rad(config.sigma_nu_ghz.value), sigma_t, grid, opts);

  std::vector<double> cdf(pdf.size(), 0.0);
  for (std::size_t i = 1; i < pdf.size(); ++i)
    cdf[i] = cdf[i - 1] + 0.5 * (pdf[i] + pdf[i - 1]) * fine_dt;
  const double total = cdf.back();

  const std::size_t n_bins = 1200;
  TcspcHistogram h;
  h.bin_edges.resize(n_bins + 1);
  for (std::size_t i = 0; i <= n_bins; ++i)
    h.bin_edges[i] = t_lo + (t_hi - t_lo) * static_cast<double>(i) / n_bins;
  h.counts.assign(n_bins, 0);
  h.total_events = events;

  CounterRng rng(seed, 0);
  for (std::uint64_t e = 0; e < events; ++e) {
    const double u = rng.uniform() * total;
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    const std::size_t j = std::min<std::size_t>(std::distance(cdf.begin(), it), cdf.size() - 1);
    double t;
    if (j == 0) {
      t = grid[0];
    } else {
      const double f = (u - cdf[j - 1]) / std::max(cdf[j] - cdf[j - 1], 1e-300);
      t = grid[j - 1] + f * fine_dt;
    }
    const auto b = static_cast<std::ptrdiff_t>((t - t_lo) / (t_hi - t_lo) * n_bins);
    if (b >= 0 && b < static_cast<std::ptrdiff_t>(n_bins)) ++h.counts[b];
  }
  if (manifest) {
    manifest->kind = DatasetKind::histogram;
    manifest->seed = seed;
    manifest->source = "synth_decay_histogram";
    manifest->truth = {{"g_ghz", config.g_ghz.value},
                       {"gamma_star_ghz", config.gamma_star_ghz.value},
                       {"kappa_ghz", config.kappa_ghz.value},
                       {"sigma_nu_ghz", config.sigma_nu_ghz.value},
                       {"sigma_t_ps", config.sigma_t_ps.value},
                       {"tau_ns", config.tau_ns.value}};
  }
  return h;
}

TcspcHistogram synth_emg_histogram(double tau_s, double sigma_t_s, std::uint64_t events,
                                   double t_max_s, std::uint64_t seed,
                                   DatasetManifest* manifest) {
  if (tau_s <= 0.0 || sigma_t_s < 0.0) fail("synth_emg_histogram: bad parameters");
  const double t0 = std::max(6.0 * sigma_t_s, 0.05 * t_max_s);
  const std::size_t n_bins = 1024;
  TcspcHistogram h;
  h.bin_edges.resize(n_bins + 1);
  for (std::size_t i = 0; i <= n_bins; ++i)
    h.bin_edges[i] = t_max_s * static_cast<double>(i) / n_bins;
  h.counts.assign(n_bins, 0);
  h.total_events = events;
  CounterRng rng(seed, 0);
  for (std::uint64_t e = 0; e < events; ++e) {
    const double t = t0 + rng.normal(0.0, sigma_t_s) + rng.exponential(1.0 / tau_s);
    const auto b = static_cast<std::ptrdiff_t>(t / t_max_s * n_bins);
    if (b >= 0 && b < static_cast<std::ptrdiff_t>(n_bins)) ++h.counts[b];
  }
  if (manifest) {
    manifest->kind = DatasetKind::histogram;
    manifest->seed = seed;
    manifest->source = "synth_emg_histogram";
    manifest->truth = {{"tau_s", tau_s}, {"sigma_t_s", sigma_t_s}, {"t0_s", t0}};
  }
  return h;
}

std::pair<std::vector<double>, std::vector<double>> synth_sideband_sweep(
    double kappa_ghz, double sideband_ghz, std::uint64_t seed, DatasetManifest* manifest) {
  if (kappa_ghz <= 0.0 || sideband_ghz <= 0.0) fail("synth_sideband_sweep: bad parameters");
  CounterRng rng(seed, 0);
  const double center = 0.5 + rng.normal(0.0, 0.01);
  const double sep_axis = 0.18;  // axis units per 4 GHz sideband
  const double ghz_per_axis = sideband_ghz / sep_axis;
  const double hw_axis = 0.5 * kappa_ghz / ghz_per_axis;
  const std::size_t n = 3000;
  std::vector<double> x(n), y(n);
  auto lor = [hw_axis](double dx) { return hw_axis * hw_axis / (dx * dx + hw_axis * hw_axis); };
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<double>(i) / (n - 1);
    const double signal = lor(x[i] - center) +
                          0.22 * (lor(x[i] - center - sep_axis) + lor(x[i] - center + sep_axis));
    y[i] = signal + 0.004 * rng.normal();
  }
  if (manifest) {
    manifest->kind = DatasetKind::sweep;
    manifest->seed = seed;
    manifest->source = "synth_sideband_sweep";
    manifest->metadata["sideband_ghz"] = sideband_ghz;
    manifest->truth = {{"kappa_ghz", kappa_ghz}, {"center_axis", center},
                       {"sep_axis", sep_axis}};
  }
  return {x, y};
}

DetuningSeries synth_detuning_series(double sigma_g_pm, double fwhm_l_pm, double quiet_duty,
                                     std::size_t n, double sample_rate_hz, std::uint64_t seed,
                                     DatasetManifest* manifest) {
  if (sigma_g_pm <= 0.0 || fwhm_l_pm < 0.0 || quiet_duty <= 0.0 || quiet_duty > 1.0)
    fail("synth_detuning_series: bad parameters");
  DetuningSeries s;
  s.unit = DetuningUnit::picometre;
  s.times.resize(n);
  s.detunings.resize(n);
  s.quiet_mask.resize(n);
  CounterRng rng(seed, 0);
  // 1 s cryocooler cycle with the quiet fraction at the start of each cycle
  const auto cycle = static_cast<std::size_t>(sample_rate_hz);
  const double hwhm = 0.5 * fwhm_l_pm;
  constexpr double cut = 25.0;  // Lorentzian tail truncation, keeps the RMS finite
  const double atan_cut = std::atan(cut);
  for (std::size_t i = 0; i < n; ++i) {
    s.times[i] = static_cast<double>(i) / sample_rate_hz;
    const bool quiet = cycle == 0 || (i % std::max<std::size_t>(cycle, 1)) <
                                         static_cast<std::size_t>(quiet_duty * cycle);
    double v = rng.normal(0.0, sigma_g_pm);
    if (!quiet && hwhm > 0.0)
      v += hwhm * std::tan((2.0 * rng.uniform() - 1.0) * atan_cut);
    s.detunings[i] = v;
    s.quiet_mask[i] = quiet;
  }
  if (manifest) {
    manifest->kind = DatasetKind::detunings;
    manifest->seed = seed;
    manifest->source = "synth_detuning_series";
    manifest->metadata["sample_rate_hz"] = sample_rate_hz;
    manifest->truth = {{"sigma_g_pm", sigma_g_pm},
                       {"fwhm_l_pm", fwhm_l_pm},
                       {"quiet_duty", quiet_duty}};
  }
  return s;
}

std::pair<std::vector<double>, std::vector<double>> synth_saturation(
    double i_inf, double p_sat_w, double c_bg, double c_dark, std::size_t n, double p_max_w,
    double noise_frac, std::uint64_t seed, DatasetManifest* manifest) {
  if (i_inf <= 0.0 || p_sat_w <= 0.0 || n < 4) fail("synth_saturation: bad parameters");
  std::vector<double> p(n), y(n);
  CounterRng rng(seed, 0);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = p_max_w * static_cast<double>(i + 1) / n;
    const double clean = i_inf * p[i] / (p[i] + p_sat_w) + c_bg * p[i] + c_dark;
    y[i] = clean * (1.0 + noise_frac * rng.normal());
  }
  if (manifest) {
    manifest->kind = DatasetKind::saturation;
    manifest->seed = seed;
    manifest->source = "synth_saturation";
    manifest->truth = {{"i_inf", i_inf}, {"p_sat_w", p_sat_w}, {"c_bg", c_bg},
                       {"c_dark", c_dark}};
  }
  return {p, y};
}

TimeTagStream synth_antibunched_stream(double rate_hz, double tau1_s, double duration_s,
                                       std::uint64_t seed, DatasetManifest* manifest) {
  if (rate_hz <= 0.0 || tau1_s <= 0.0 || rate_hz * tau1_s >= 0.8)
    fail("synth_antibunched_stream: emission rate too close to 1/tau1");
  const double exc_rate = 1.0 / (1.0 / rate_hz - tau1_s);
  TimeTagStream s;
  CounterRng rng(seed, 0);
  double t = 0.0;
  while (true) {
    t += rng.exponential(exc_rate);   // wait for excitation
    t += rng.exponential(1.0 / tau1_s);  // excited-state dwell, then photon
    if (t >= duration_s) break;
    TimeTag tag;
    tag.ps = static_cast<std::uint64_t>(t * 1e12);
    tag.channel = rng.uniform() < 0.5 ? 0 : 1;
    s.records.push_back(tag);
  }
  if (manifest) {
    manifest->kind = DatasetKind::timetags;
    manifest->seed = seed;
    manifest->source = "synth_antibunched_stream";
    manifest->axis_units["t"] = "ps";
    manifest->truth = {{"rate_hz", rate_hz}, {"tau1_s", tau1_s}};
  }
  return s;
}

}  // namespace cavqed::io
