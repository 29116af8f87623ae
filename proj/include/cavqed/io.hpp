#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cavqed/fit.hpp"
#include "cavqed/lineshape.hpp"
#include "cavqed/time_domain.hpp"

namespace cavqed::io {

enum class DatasetKind : std::uint8_t {
  timetags,
  histogram,
  sweep,
  spectrum,
  saturation,
  detunings,
};

std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

struct DatasetManifest {
  DatasetKind kind = DatasetKind::histogram;
  std::map<std::string, std::string> axis_units;   // e.g. {"x": "s", "y": "counts"}
  std::map<std::string, double> metadata;          // gate_s, sync_channel, slope_pm_per_ghz, ...
  std::map<std::string, double> truth;             // generator truth, when synthetic
  std::optional<std::uint64_t> seed;
  std::string source;                              // generator name or source file
  std::string tool_version;

  void validate() const;  // kind-specific required metadata
};

// generic column table with a `# key: value` header block
struct CurveTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::map<std::string, std::string> header;
};

void save_curve_table(const std::filesystem::path& path, const CurveTable& table);
CurveTable load_curve_table(const std::filesystem::path& path);

// typed datasets
void save_histogram(const std::filesystem::path& path, const TcspcHistogram& h,
                    const DatasetManifest& manifest);
std::pair<TcspcHistogram, DatasetManifest> load_histogram(const std::filesystem::path& path);

void save_detunings(const std::filesystem::path& path, const DetuningSeries& s,
                    double sample_rate_hz, const DatasetManifest& manifest);
std::tuple<DetuningSeries, double, DatasetManifest> load_detunings(
    const std::filesystem::path& path);

void save_sweep(const std::filesystem::path& path, std::span<const double> x,
                std::span<const double> y, const DatasetManifest& manifest);
std::tuple<std::vector<double>, std::vector<double>, DatasetManifest> load_sweep(
    const std::filesystem::path& path);

void save_saturation(const std::filesystem::path& path, std::span<const double> power_w,
                     std::span<const double> counts_per_s, const DatasetManifest& manifest);
std::tuple<std::vector<double>, std::vector<double>, DatasetManifest> load_saturation(
    const std::filesystem::path& path);

// binary time tags: 16-byte header (magic "CVQTTAG1", u32 version, u32
// reserved) then little-endian records of (u64 picoseconds, u8 channel)
void save_timetags(const std::filesystem::path& path, const TimeTagStream& stream,
                   const DatasetManifest& manifest);
std::pair<TimeTagStream, DatasetManifest> load_timetags(const std::filesystem::path& path);

// run configuration (JSON; unknown keys rejected, units in the key names)
struct RunConfig {
  // cQED central values and uncertainties, /2pi GHz
  MeasuredValue g_ghz{0.36, 0.02};
  MeasuredValue kappa_ghz{2.07, 0.06};
  MeasuredValue gamma_star_ghz{1.0, 0.9};
  MeasuredValue tau_ns{6.1, 0.1};
  MeasuredValue pump_ghz{0.08, 0.01};
  MeasuredValue sigma_nu_ghz{1.796, 0.006};
  MeasuredValue delta_cw_ghz{8.90, 0.16};
  MeasuredValue kappa_prime_ghz{5.8, 0.1};
  MeasuredValue sigma_t_ps{196.0, 5.0};
  // geometry
  MeasuredValue waist_um{1.30, 0.01};
  MeasuredValue t_diamond_um{1.05, 0.02};
  MeasuredValue t_air_um{6.95, 0.05};
  double roc_um = 22.5;
  double n_diamond = 2.41;
  double wavelength_nm = 602.0;
  double slope_pm_per_ghz = 17.64;
  std::string stack_file;  // empty = default surrogate mirror
  // fit options
  int n_mc = 50;
  std::uint64_t seed = 1;
  double fit_rel_tol = 1e-9;

  MeasuredValue gamma_ghz() const;  // 1/(2 pi tau)
};

RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);
std::string config_hash(const RunConfig& config);  // hex digest of canonical form

// results: flat key -> (value, sigma, unit), serialized as JSON
struct ResultFile {
  std::map<std::string, std::tuple<double, double, std::string>> entries;
  void set(const std::string& key, double value, double sigma, const std::string& unit);
};
void save_results(const std::filesystem::path& path, const ResultFile& results);
ResultFile load_results(const std::filesystem::path& path);

// run manifest: reproducibility record written next to every result
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string tool_version;
  std::map<std::string, std::string> inputs;   // named input files
  std::map<std::string, std::string> outputs;  // named output files
};
void save_run_manifest(const std::filesystem::path& path, const RunManifest& manifest);
RunManifest load_run_manifest(const std::filesystem::path& path);

// synthetic datasets with recorded generator truth
TcspcHistogram synth_decay_histogram(const RunConfig& config, std::uint64_t events,
                                     std::uint64_t seed, DatasetManifest* manifest = nullptr);
TcspcHistogram synth_emg_histogram(double tau_s, double sigma_t_s, std::uint64_t events,
                                   double t_max_s, std::uint64_t seed,
                                   DatasetManifest* manifest = nullptr);
std::pair<std::vector<double>, std::vector<double>> synth_sideband_sweep(
    double kappa_ghz, double sideband_ghz, std::uint64_t seed,
    DatasetManifest* manifest = nullptr);
DetuningSeries synth_detuning_series(double sigma_g_pm, double fwhm_l_pm,
                                     double quiet_duty, std::size_t n, double sample_rate_hz,
                                     std::uint64_t seed, DatasetManifest* manifest = nullptr);
std::pair<std::vector<double>, std::vector<double>> synth_saturation(
    double i_inf, double p_sat_w, double c_bg, double c_dark, std::size_t n, double p_max_w,
    double noise_frac, std::uint64_t seed, DatasetManifest* manifest = nullptr);
TimeTagStream synth_antibunched_stream(double rate_hz, double tau1_s, double duration_s,
                                       std::uint64_t seed, DatasetManifest* manifest = nullptr);

// atomic write (temp file + rename)
void atomic_write(const std::filesystem::path& path, const std::string& contents);

}  // namespace cavqed::io
