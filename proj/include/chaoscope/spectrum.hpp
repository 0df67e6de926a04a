#pragma once

#include "chaoscope/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace chaoscope {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct SpectrumResult {
    std::vector<double> sigma;          // descending
    std::vector<std::vector<double>> v; // right singular vectors, unit norm
    std::vector<std::vector<double>> u; // left singular vectors
    std::vector<double> base_point;
    double fd_step = 0.0;

    double sigma_max() const { return sigma.empty() ? 0.0 : sigma.front(); }
    double sigma_min() const { return sigma.empty() ? 0.0 : sigma.back(); }
};

using VectorFn = std::function<std::vector<double>(std::span<const double>)>;

// Central differences column by column, J[:,i] = (f(x+h e_i) - f(x-h e_i))/2h,
// in Fp64. Columns are probed concurrently; assembly by index keeps the
// result schedule-independent. Throws on step <= 0 or a non-finite
// evaluation.
Matrix fd_jacobian(const VectorFn& f, std::span<const double> x, double step);

double default_fd_step(std::span<const double> x);

// One-sided Jacobi SVD with a fixed cyclic sweep order; deterministic.
// Throws SvdError (with the residual) if the sweep budget is exhausted.
SpectrumResult svd(const Matrix& j);

struct SvdError : std::runtime_error {
    explicit SvdError(const std::string& what, double residual_)
        : std::runtime_error(what), residual(residual_) {}
    double residual;
};

// Jacobian of the subject's Fp64 reference at x0, then its SVD. The caller
// passes a subject built in Fp64; the spectrum is the clean reference the
// low-precision probes are compared against.
SpectrumResult compute_spectrum(const Subject& fp64_subject, std::span<const double> x0,
                                double step = 0.0);

// Sidecar cache so expensive spectra are computed once per (model seed, base
// point, fd step).
struct SpectrumKey {
    std::uint64_t model_seed = 0;
    std::uint64_t base_hash = 0; // FNV-1a over the base point bytes
    double fd_step = 0.0;

    bool operator==(const SpectrumKey&) const = default;
};

std::uint64_t hash_doubles(std::span<const double> values);

void save_spectrum(const std::filesystem::path& path, const SpectrumResult& spectrum,
                   const SpectrumKey& key);

// Returns false (leaves `out` untouched) if the file is missing or keyed
// differently; throws on a corrupt file.
bool load_spectrum(const std::filesystem::path& path, const SpectrumKey& key,
                   SpectrumResult& out);

} // namespace chaoscope
