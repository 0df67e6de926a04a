#pragma once

#include "chaoscope/model.hpp"
#include "chaoscope/probes.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace chaoscope {

inline constexpr std::string_view kArtifactVersion = "0.1.0";
inline constexpr int kConfigSchemaVersion = 1;

// Round-trip-exact decimal serialization of binary doubles (shortest form).
std::string format_double(double x);
double parse_double(const std::string& text);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const; // throws if absent
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

// --- run configuration -----------------------------------------------------
// Flat key = value text with '#' comments. Unknown or duplicate keys are
// errors that name the line.

struct RunConfig {
    int schema_version = kConfigSchemaVersion;
    std::string probe; // one of the probe names below
    std::string subject = "model"; // model | oracle
    std::filesystem::path output_dir = "out";
    bool plot = false;
    bool overwrite = false;

    ModelConfig model;

    struct OracleParams {
        std::size_t dim = 64;
        double sigma_min = 1e-3;
        double sigma_max = 1e3;
        std::uint64_t seed = 7;
        std::size_t vocab_size = 16;
        bool operator==(const OracleParams&) const = default;
    } oracle;

    struct BaseParams {
        std::uint64_t seed = 7;
        double scale = 0.125;
        double decades = 3.0;
        std::string position = "last"; // "last" or a 0-based index
        bool operator==(const BaseParams&) const = default;
    } base;

    struct SpectrumParams {
        double step = 0.0; // 0 = auto
        std::string cache; // optional sidecar path
        bool operator==(const SpectrumParams&) const = default;
    } spectrum;

    RegimeThresholds thresholds;

    struct SweepParams {
        double eps_min = 1e-14;
        double eps_max = 1e-1;
        std::size_t points = 120;
        std::vector<std::string> directions = {"v1"};
        bool operator==(const SweepParams&) const = default;
    } sweep;

    struct GainParams {
        double eps = 0.1;
        std::vector<std::string> directions = {"v1"};
        bool operator==(const GainParams&) const = default;
    } gain;

    struct InstParams {
        std::string direction = "v1";
        double eps_start = 1e-12;
        double delta = 1e-13;
        std::size_t points = 1000;
        bool operator==(const InstParams&) const = default;
    } inst;

    struct MicroParams {
        std::string direction = "v1";
        double start_s = 1e-12;
        double delta = 1e-13;
        std::size_t steps = 1000;
        bool operator==(const MicroParams&) const = default;
    } micro;

    struct MapParams {
        std::string dir_i = "v1";
        std::string dir_j = "v2";
        double range = 1e-8;
        double step = 2e-10;
        bool near_tie = true;
        double tie_tolerance = 1e-4;
        bool operator==(const MapParams&) const = default;
    } map;

    struct BoundaryParams {
        double s_init = 1e-14;
        double s_cap = 1.0;
        std::size_t angles = 360;
        bool operator==(const BoundaryParams&) const = default;
    } boundary;

    struct KappaParams {
        std::string direction = "v1";
        double eps = 1e-9;
        std::vector<std::size_t> samples = {1, 10, 100};
        std::size_t repeats = 10;
        double noise = 1e-9;
        std::uint64_t seed = 99;
        bool operator==(const KappaParams&) const = default;
    } kappa;

    bool operator==(const RunConfig&) const = default;
};

inline const std::vector<std::string>& probe_names() {
    static const std::vector<std::string> names = {
        "directional_sweep", "layerwise_gain",    "instability_sweep", "micro_continuity",
        "decision_map",      "angular_boundary",  "spectrum_boundary", "noise_averaged_kappa",
    };
    return names;
}

RunConfig parse_run_config_text(const std::string& text); // throws ConfigError
RunConfig parse_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& cfg);

// --- probe record -> table converters ---------------------------------------

CsvTable sweep_table(const std::vector<SweepRecord>& records);
CsvTable gain_table(const LayerGainTable& table);
CsvTable instability_table(const InstabilityResult& result);
CsvTable micro_table(const MicroContinuityResult& result);
CsvTable decision_table(const DecisionMapResult& result);
CsvTable boundary_table(const std::vector<BoundaryResult>& results);
struct KappaRecord {
    std::size_t n_samples = 0;
    std::size_t repeat = 0;
    std::uint64_t noise_seed = 0;
    double kappa = 0.0;
};
CsvTable kappa_table(const std::vector<KappaRecord>& records);
CsvTable sigma_table(const SpectrumResult& spectrum);

// Reconstruct a decision grid from its serialized table (for the metric
// purity check and for re-plotting).
DecisionMapResult decision_from_table(const CsvTable& table);

// --- orchestration ------------------------------------------------------------

struct CliOverrides {
    std::optional<PrecisionMode> precision;
    bool overwrite = false;
};

// Executes the configured probe: CSV + manifest, optional SVG. Returns the
// number of data rows written. Throws ConfigError / NumericalAbort /
// SearchBudgetError; the CLI maps those to exit codes.
std::size_t run_probe(const RunConfig& cfg, const CliOverrides& overrides = {});

// Computes (or loads) the reference spectrum for a config and writes the
// sigma table + binary sidecar under output_dir.
std::size_t run_spectrum(const RunConfig& cfg, const CliOverrides& overrides = {});

} // namespace chaoscope
