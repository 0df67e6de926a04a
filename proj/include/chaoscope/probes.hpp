#pragma once

#include "chaoscope/model.hpp"
#include "chaoscope/spectrum.hpp"

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace chaoscope {

// --- shared probe vocabulary --------------------------------------------

struct Direction {
    std::string label;
    std::vector<double> v; // unit norm
};

Direction singular_direction(const SpectrumResult& spectrum, std::size_t k); // k is 0-based
Direction coordinate_direction(std::size_t dim, std::size_t index);
Direction random_direction(std::size_t dim, std::uint64_t seed);

std::vector<double> log_eps_grid(double lo, double hi, std::size_t points);

// Regime decision rule. The paper names the regimes without a formal
// classifier; these thresholds are recorded in every output file.
struct RegimeThresholds {
    double c_chaos = 10.0;      // Chaotic iff d_eff > c_chaos * sigma_1
    double signal_lo = 0.1;     // SignalDominated iff d_eff >= signal_lo * sigma_d ...
    double signal_hi = 10.0;    // ... and d_eff <= signal_hi * sigma_1

    bool operator==(const RegimeThresholds&) const = default;
};

enum class Regime { Constant, Chaotic, SignalDominated, Unclassified };

std::string_view to_string(Regime regime);

Regime classify_regime(bool finite, bool bitwise_constant, double d_eff,
                       const SpectrumResult& spectrum, const RegimeThresholds& thresholds);

// Fp64 measurement helpers; probes difference forward outputs with these so
// the measurement adds no noise of its own.
double l2_norm(std::span<const double> v);
double norm_diff(std::span<const double> a, std::span<const double> b);

double spearman_rank_correlation(std::span<const double> a, std::span<const double> b);

// --- directional sweep (D(eps, v) = ||f(x+eps v) - f(x)|| / eps) ----------

struct SweepConfig {
    std::vector<double> eps_grid;      // strictly increasing, positive
    std::vector<Direction> directions; // unit norm within 1e-10
    std::vector<double> base;          // probe-space base point
    RegimeThresholds thresholds;

    void validate(std::size_t dim) const;
};

struct SweepRecord {
    double eps = 0.0;
    std::string direction_label;
    double d_eff = 0.0;
    bool bitwise_constant = false;
    Regime regime = Regime::Unclassified;
    bool finite = true;
};

std::vector<SweepRecord> directional_sweep(const Subject& subject,
                                           const SpectrumResult& spectrum,
                                           const SweepConfig& cfg);

// Regime run-length smoothing: a label must persist for >= 2 consecutive
// grid points to count as a segment; Unclassified segments are dropped.
// Input records must belong to one direction, in increasing-eps order.
std::vector<Regime> smoothed_segments(std::span<const SweepRecord> records);

// True iff segments appear in (Constant)* (Chaotic)* (SignalDominated)* order.
bool trichotomy_ordered(std::span<const Regime> segments);

// --- layer-wise propagation ------------------------------------------------

struct LayerGainTable {
    double eps = 0.0;
    std::vector<std::string> direction_labels;
    std::size_t n_taps = 0;
    std::vector<double> gains; // row-major, taps x directions

    double at(std::size_t tap, std::size_t dir) const {
        return gains[tap * direction_labels.size() + dir];
    }
};

LayerGainTable layerwise_gain(const Subject& subject, std::span<const double> x0,
                              double eps, const std::vector<Direction>& directions);

// --- finite-difference instability statistic -------------------------------

struct InstabilitySummary {
    double mean_inst = 0.0;
    double median_inst = 0.0;
    double max_drift = 0.0;
    double mean_margin = 0.0;
    double min_margin = 0.0;
};

struct InstabilityResult {
    InstabilitySummary summary;
    std::vector<double> eps;         // T entries
    std::vector<double> instability; // T-1 entries, I_2..I_T
    std::vector<double> margins;     // T entries
    std::vector<double> drift;       // T entries, ||m_i - m_1||
};

InstabilityResult instability_sweep(const Subject& subject, std::span<const double> x0,
                                    std::span<const double> direction,
                                    std::span<const double> eps_sequence);

// --- micro-continuity staircase ---------------------------------------------

struct MicroStep {
    double s = 0.0;
    bool stall = false;         // bitwise-equal to the previous point
    double consec_norm = 0.0;   // ||m_i - m_{i-1}||
    double cumulative_norm = 0.0; // ||m_i - m_0||
};

struct MicroContinuityResult {
    double start_s = 0.0;
    double delta = 0.0;
    std::vector<MicroStep> steps; // n_steps entries
    std::size_t stall_count = 0;
    std::size_t jump_count = 0;
};

MicroContinuityResult micro_continuity(const Subject& subject, std::span<const double> x0,
                                       std::span<const double> direction, double start_s,
                                       std::size_t n_steps, double delta);

// --- decision maps -----------------------------------------------------------

struct DecisionMapMetrics {
    double flip_frequency = 0.0;  // differing 4-neighbor pairs / all adjacent pairs
    std::size_t fragmentation = 0; // 4-connected components over both labels
    double crossing_density = 0.0; // sign changes per row+column scan
};

DecisionMapMetrics decision_metrics(std::span<const std::uint8_t> grid,
                                    std::size_t rows, std::size_t cols);

struct DecisionMapResult {
    std::size_t n = 0;               // grid is n x n
    std::vector<std::uint8_t> grid;  // 0: token_a wins, 1: token_b wins
    int token_a = 0;                 // top token at the base point
    int token_b = 0;                 // runner-up at the base point
    std::size_t overflow_cells = 0;  // cells where the global argmax left the pair
    double eps_range = 0.0;
    double step = 0.0;
    std::vector<double> offsets;     // per-index grid offsets
    DecisionMapMetrics metrics;
};

DecisionMapResult decision_map(const Subject& subject, std::span<const double> x0,
                               std::span<const double> dir_i, std::span<const double> dir_j,
                               double eps_range, double step);

// --- near-tie construction ----------------------------------------------------

struct NearTieParams {
    double tie_tolerance = 1e-4; // logit units
    double t_init = 1e-3;
    double t_cap = 1e3;
    int max_bisect = 200;
};

// Walks along v_1 for a sign change of the top-2 logit gap, then bisects
// until the margin is within tolerance. Throws SearchBudgetError when no
// near-tie is reachable.
std::vector<double> find_near_tie(const Subject& subject, std::span<const double> start,
                                  const SpectrumResult& spectrum,
                                  const NearTieParams& params = {});

// --- ULP-exact stability boundaries -----------------------------------------

struct BoundarySearchParams {
    double s_init = 1e-14;
    double s_cap = 1.0;
    int max_bisect = 200;
};

struct BoundaryResult {
    std::string direction_label;
    double s_max = 0.0;        // largest magnitude with bitwise-unchanged M
    bool s_next_flips = false; // M changes at nextafter(s_max) in the fp32 lattice
    std::size_t search_evals = 0;
    bool unbounded = false;    // no flip up to s_cap (deep constant region)
    double theta = std::numeric_limits<double>::quiet_NaN();
    double sigma = std::numeric_limits<double>::quiet_NaN();
};

// Exponential search, then binary search, then ULP refinement; s moves on
// the fp32 lattice (the paper's convention) regardless of probe precision.
BoundaryResult boundary_search(const Subject& subject, std::span<const double> x0,
                               std::span<const double> direction, std::string label,
                               const BoundarySearchParams& params = {});

std::vector<BoundaryResult> angular_boundary(const Subject& subject, std::span<const double> x0,
                                             std::span<const double> dir_a,
                                             std::span<const double> dir_b,
                                             std::size_t n_angles,
                                             const BoundarySearchParams& params = {});

std::vector<BoundaryResult> spectrum_boundary(const Subject& subject, std::span<const double> x0,
                                              const SpectrumResult& spectrum,
                                              const BoundarySearchParams& params = {});

// --- noise-averaged condition number estimate --------------------------------

// kappa_smooth = ||mean_j f(x0 + eps v + eta_j v) - mean_j f(x0 + eta_j v)|| / eps
// with eta_j uniform in [-noise_mag, noise_mag]. With n_samples = 1 and zero
// noise this is bitwise the plain d_eff.
double noise_averaged_kappa(const Subject& subject, std::span<const double> x0,
                            std::span<const double> direction, double eps,
                            std::size_t n_samples, double noise_mag,
                            std::uint64_t noise_seed);

} // namespace chaoscope
