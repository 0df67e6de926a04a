#pragma once

#include "chaoscope/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace chaoscope {

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 8;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    std::size_t vocab_size = 256;
    std::size_t seq_len = 8;
    std::uint64_t seed = 0;
    PrecisionMode precision = PrecisionMode::Fp32;
    ReductionOrder reduction = ReductionOrder::sequential();

    void validate() const; // throws std::invalid_argument on bad shape relations

    ModelConfig with_precision(PrecisionMode mode) const {
        ModelConfig c = *this;
        c.precision = mode;
        return c;
    }

    bool operator==(const ModelConfig&) const = default;
};

// Full flattened input embedding sequence plus the token position that
// perturbations apply to.
struct EmbeddingPoint {
    std::vector<double> x; // seq_len * d_model, row per position
    std::size_t perturb_position = 0;
};

// Coordinate magnitude profiles for seeded probe points.
//  - LogUniform: magnitudes log-uniform over `magnitude_decades` decades below
//    `scale`, mimicking the heavy-tailed coordinate spread of real embedding
//    vectors; the small coordinates carry fine ULP structure, which is where
//    rounding thresholds live.
//  - Binade: all magnitudes inside one power-of-two binade at `scale`
//    (random signs), so every coordinate shares the same FP32 ULP; boundary
//    thresholds then concentrate instead of spreading over decades.
enum class PointProfile { LogUniform, Binade };

std::vector<double> make_probe_vector(std::size_t dim, std::uint64_t seed,
                                      double scale = 0.125, double magnitude_decades = 3.0,
                                      PointProfile profile = PointProfile::LogUniform);

EmbeddingPoint make_embedding_point(const ModelConfig& cfg, std::uint64_t seed,
                                    double scale = 0.125, double magnitude_decades = 3.0,
                                    PointProfile profile = PointProfile::LogUniform);

// Seeded Gaussian direction, normalized to unit length in Fp64.
std::vector<double> random_unit_direction(std::size_t dim, std::uint64_t seed);

struct LstOutput {
    std::vector<double> m;      // last pseudo token, length d_model
    std::vector<double> logits; // vocab_size
    double margin = 0.0;        // largest minus second-largest logit
    int argmax_token = 0;       // ties break to the lowest index
    bool finite = true;         // false flags a NaN/inf abort
};

double logit_margin(std::span<const double> logits);
int argmax_lowest(std::span<const double> logits);

// Exact bit comparison (memcmp); the definition of "bitwise constant".
bool bitwise_equal(std::span<const double> a, std::span<const double> b);

// Deterministic pre-norm decoder stack: embedding + positional table, then
// n_layers of (rmsnorm, causal attention, residual, rmsnorm, feed-forward,
// residual), final rmsnorm, unembedding. Every scalar op rounds into
// config.precision and every sum follows config.reduction.
class ToyModel {
public:
    explicit ToyModel(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }

    LstOutput forward(const EmbeddingPoint& point) const;

    // Residual-stream states at perturb_position: entry 0 after the embedding
    // stage, entry L after layer L. The last entry is the final-normed
    // backbone output, so with perturb_position == seq_len-1 it equals
    // forward(...).m bitwise.
    std::vector<std::vector<double>> layer_taps(const EmbeddingPoint& point) const;

    // All weights in a fixed documented order (see export_weights).
    std::vector<double> flat_weights() const;

    // Little-endian scalar dump with a shape header, for cross-run
    // reproducibility checks.
    void export_weights(const std::filesystem::path& path) const;

    std::span<const double> unembedding_row(std::size_t token) const;

private:
    friend class ModelSubject;
    struct Impl;
    std::shared_ptr<const Impl> impl_;
    ModelConfig config_;
};

// Reference linear map with a known exact SVD: y = U diag(sigma) V^T x,
// evaluated through its factors. Carries its own unembedding so decision
// probes have closed-form answers against it.
class LinearOracle {
public:
    LinearOracle(std::vector<double> sigma, std::uint64_t seed, std::size_t vocab_size = 16);

    static LinearOracle log_spaced(std::size_t dim, double sigma_min, double sigma_max,
                                   std::uint64_t seed, std::size_t vocab_size = 16);

    // Identity factors, A = diag(sigma); the seed only feeds the unembedding.
    static LinearOracle diagonal(std::vector<double> sigma, std::uint64_t seed,
                                 std::size_t vocab_size = 16);

    std::size_t dim() const { return dim_; }
    std::size_t vocab_size() const { return vocab_; }
    const std::vector<double>& sigma() const { return sigma_; }
    std::span<const double> right_singular(std::size_t k) const;
    std::span<const double> left_singular(std::size_t k) const;
    std::span<const double> unembedding_row(std::size_t token) const;

    // A·x through the factors, each op rounded into the mode.
    std::vector<double> forward(std::span<const double> x, PrecisionMode mode,
                                const ReductionOrder& order) const;

    // x with A·x ~= y, via V diag(1/sigma) U^T y in Fp64. Lets tests pick a
    // base point whose image has a prescribed coordinate profile.
    std::vector<double> preimage(std::span<const double> y) const;

    // Dense row-major A = U diag(sigma) V^T accumulated in Fp64.
    std::vector<double> materialize() const;

private:
    std::size_t dim_;
    std::size_t vocab_;
    std::vector<double> sigma_;
    std::vector<double> u_cols_; // dim x dim, column k at [k*dim .. )
    std::vector<double> v_cols_;
    std::vector<double> u_rows_; // row-major mirror for the output matvec
    std::vector<double> unembed_;
};

// What a probe measures: a map from the probe space (R^d_model) to an
// LstOutput. Implementations must be safe to call concurrently.
class Subject {
public:
    virtual ~Subject() = default;
    virtual std::size_t dim() const = 0;
    virtual PrecisionMode precision() const = 0;
    virtual LstOutput eval(std::span<const double> probe_x) const = 0;
    virtual std::vector<std::vector<double>> taps(std::span<const double> probe_x) const = 0;
    virtual std::vector<double> base() const = 0;
};

// Probe space = the perturb_position slice of the embedding sequence; the
// other positions stay fixed at the stored base point.
class ModelSubject : public Subject {
public:
    ModelSubject(const ToyModel& model, EmbeddingPoint base_point);

    std::size_t dim() const override;
    PrecisionMode precision() const override;
    LstOutput eval(std::span<const double> probe_x) const override;
    std::vector<std::vector<double>> taps(std::span<const double> probe_x) const override;
    std::vector<double> base() const override;

private:
    EmbeddingPoint with_slice(std::span<const double> probe_x) const;
    const ToyModel* model_;
    EmbeddingPoint base_;
};

class OracleSubject : public Subject {
public:
    OracleSubject(const LinearOracle& oracle, std::vector<double> base,
                  PrecisionMode mode = PrecisionMode::Fp64,
                  ReductionOrder order = ReductionOrder::sequential());

    // Representation lattice for the emitted m (defaults to the compute
    // mode). Storing coarser than the arithmetic makes bit-flip boundaries
    // signal-driven instead of rounding-noise-driven, which is the analytic
    // linear-system picture the boundary probes contrast against.
    OracleSubject& with_storage(PrecisionMode storage) {
        storage_ = storage;
        return *this;
    }

    std::size_t dim() const override;
    PrecisionMode precision() const override { return mode_; }
    LstOutput eval(std::span<const double> probe_x) const override;
    std::vector<std::vector<double>> taps(std::span<const double> probe_x) const override;
    std::vector<double> base() const override { return base_; }

private:
    const LinearOracle* oracle_;
    std::vector<double> base_;
    PrecisionMode mode_;
    PrecisionMode storage_;
    ReductionOrder order_;
};

// Identity map in a given precision; the simplest subject, used to pin the
// ULP search against hand-computable lattice boundaries.
class IdentitySubject : public Subject {
public:
    IdentitySubject(std::vector<double> base, PrecisionMode mode);

    std::size_t dim() const override { return base_.size(); }
    PrecisionMode precision() const override { return mode_; }
    LstOutput eval(std::span<const double> probe_x) const override;
    std::vector<std::vector<double>> taps(std::span<const double> probe_x) const override;
    std::vector<double> base() const override { return base_; }

private:
    std::vector<double> base_;
    PrecisionMode mode_;
};

} // namespace chaoscope
