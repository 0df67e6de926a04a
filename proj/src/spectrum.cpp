#include "chaoscope/spectrum.hpp"
#include "chaoscope/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace chaoscope {

namespace {

double frobenius(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data) s += x * x;
    return std::sqrt(s);
}

} // namespace

double default_fd_step(std::span<const double> x) {
    double mx = 0.0;
    for (double c : x) mx = std::max(mx, std::fabs(c));
    return 1e-5 * std::max(1.0, mx);
}

Matrix fd_jacobian(const VectorFn& f, std::span<const double> x, double step) {
    if (!(step > 0.0)) {
        throw std::invalid_argument("fd_jacobian: step must be positive");
    }
    const std::size_t n = x.size();
    const std::vector<double> base(x.begin(), x.end());

    // probe one column to size the output
    std::vector<double> probe = base;
    const std::size_t m = f(probe).size();
    Matrix j(m, n);

    parallel_for(n, [&](std::size_t col) {
        std::vector<double> xp = base;
        std::vector<double> xm = base;
        xp[col] += step;
        xm[col] -= step;
        const std::vector<double> fp = f(xp);
        const std::vector<double> fm = f(xm);
        if (fp.size() != m || fm.size() != m) {
            throw std::runtime_error("fd_jacobian: inconsistent output dimension");
        }
        for (std::size_t r = 0; r < m; ++r) {
            if (!std::isfinite(fp[r]) || !std::isfinite(fm[r])) {
                throw std::runtime_error("fd_jacobian: non-finite evaluation");
            }
            j.at(r, col) = (fp[r] - fm[r]) / (2.0 * step);
        }
    });
    return j;
}

SpectrumResult svd(const Matrix& j) {
    const std::size_t m = j.rows;
    const std::size_t n = j.cols;
    for (double x : j.data) {
        if (!std::isfinite(x)) throw std::invalid_argument("svd: non-finite entries");
    }

    // Work on columns of A; right rotations accumulate into V.
    std::vector<double> a = j.data; // row-major m x n
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

    auto col_dot = [&](std::size_t p, std::size_t q) {
        double s = 0.0;
        for (std::size_t r = 0; r < m; ++r) s += a[r * n + p] * a[r * n + q];
        return s;
    };

    const double fro = frobenius(j);
    if (fro == 0.0) {
        SpectrumResult zero;
        zero.sigma.assign(n, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            std::vector<double> vk(n, 0.0), uk(m, 0.0);
            vk[k] = 1.0;
            if (k < m) uk[k] = 1.0;
            zero.v.push_back(std::move(vk));
            zero.u.push_back(std::move(uk));
        }
        return zero;
    }

    const double tol = 1e-12;
    // Columns this far below the matrix scale are numerically zero; rotating
    // noise against noise never settles.
    const double negligible_sq = (1e-14 * fro) * (1e-14 * fro);
    const int max_sweeps = 64;
    double worst = 0.0;
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        worst = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double app = col_dot(p, p);
                const double aqq = col_dot(q, q);
                if (app <= negligible_sq || aqq <= negligible_sq) continue;
                const double apq = col_dot(p, q);
                const double denom = std::sqrt(app * aqq);
                if (denom == 0.0) continue;
                worst = std::max(worst, std::fabs(apq) / (fro * fro));
                if (std::fabs(apq) <= tol * denom) continue;
                converged = false;

                // classic two-sided rotation angle for the 2x2 Gram block
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t r = 0; r < m; ++r) {
                    const double ap = a[r * n + p];
                    const double aq = a[r * n + q];
                    a[r * n + p] = c * ap - s * aq;
                    a[r * n + q] = s * ap + c * aq;
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double vp = v[r * n + p];
                    const double vq = v[r * n + q];
                    v[r * n + p] = c * vp - s * vq;
                    v[r * n + q] = s * vp + c * vq;
                }
            }
        }
    }
    if (!converged) {
        throw SvdError("svd: Jacobi sweeps did not converge, residual " + std::to_string(worst),
                       worst);
    }

    std::vector<double> sigma(n);
    for (std::size_t k = 0; k < n; ++k) sigma[k] = std::sqrt(col_dot(k, k));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    SpectrumResult res;
    res.sigma.resize(n);
    res.v.resize(n);
    res.u.resize(n);
    for (std::size_t out = 0; out < n; ++out) {
        const std::size_t k = order[out];
        res.sigma[out] = sigma[k];
        std::vector<double> vk(n), uk(m, 0.0);
        for (std::size_t r = 0; r < n; ++r) vk[r] = v[r * n + k];
        if (sigma[k] > 0.0) {
            for (std::size_t r = 0; r < m; ++r) uk[r] = a[r * n + k] / sigma[k];
        } else if (out < m) {
            uk[out] = 1.0; // arbitrary but deterministic for null columns
        }
        // sign convention: the largest-magnitude component of v is positive
        std::size_t imax = 0;
        for (std::size_t r = 1; r < n; ++r) {
            if (std::fabs(vk[r]) > std::fabs(vk[imax])) imax = r;
        }
        if (vk[imax] < 0.0) {
            for (double& c : vk) c = -c;
            for (double& c : uk) c = -c;
        }
        res.v[out] = std::move(vk);
        res.u[out] = std::move(uk);
    }
    return res;
}

SpectrumResult compute_spectrum(const Subject& fp64_subject, std::span<const double> x0,
                                double step) {
    if (step == 0.0) step = default_fd_step(x0);
    VectorFn f = [&fp64_subject](std::span<const double> x) {
        return fp64_subject.eval(x).m;
    };
    Matrix j = fd_jacobian(f, x0, step);
    SpectrumResult res = svd(j);
    res.base_point.assign(x0.begin(), x0.end());
    res.fd_step = step;
    return res;
}

std::uint64_t hash_doubles(std::span<const double> values) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xFFu;
            h *= 0x100000001B3ULL;
        }
    }
    return h;
}

namespace {
constexpr char kSpectrumMagic[4] = {'C', 'S', 'P', '1'};
}

void save_spectrum(const std::filesystem::path& path, const SpectrumResult& spectrum,
                   const SpectrumKey& key) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open spectrum cache for writing: " + path.string());
    }
    out.write(kSpectrumMagic, 4);
    out.write(reinterpret_cast<const char*>(&key.model_seed), 8);
    out.write(reinterpret_cast<const char*>(&key.base_hash), 8);
    out.write(reinterpret_cast<const char*>(&key.fd_step), 8);
    const std::uint64_t n = spectrum.sigma.size();
    const std::uint64_t m = spectrum.u.empty() ? 0 : spectrum.u.front().size();
    const std::uint64_t base_len = spectrum.base_point.size();
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(&m), 8);
    out.write(reinterpret_cast<const char*>(&base_len), 8);
    auto dump = [&out](std::span<const double> v) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    dump(spectrum.sigma);
    for (const auto& vk : spectrum.v) dump(vk);
    for (const auto& uk : spectrum.u) dump(uk);
    dump(spectrum.base_point);
    out.write(reinterpret_cast<const char*>(&spectrum.fd_step), 8);
    if (!out) {
        throw std::runtime_error("short write on spectrum cache: " + path.string());
    }
}

bool load_spectrum(const std::filesystem::path& path, const SpectrumKey& key,
                   SpectrumResult& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kSpectrumMagic, 4) != 0) {
        throw std::runtime_error("corrupt spectrum cache (bad magic): " + path.string());
    }
    SpectrumKey file_key;
    in.read(reinterpret_cast<char*>(&file_key.model_seed), 8);
    in.read(reinterpret_cast<char*>(&file_key.base_hash), 8);
    in.read(reinterpret_cast<char*>(&file_key.fd_step), 8);
    if (!in) throw std::runtime_error("corrupt spectrum cache (truncated key)");
    if (!(file_key == key)) return false;

    std::uint64_t n = 0, m = 0, base_len = 0;
    in.read(reinterpret_cast<char*>(&n), 8);
    in.read(reinterpret_cast<char*>(&m), 8);
    in.read(reinterpret_cast<char*>(&base_len), 8);
    if (!in || n == 0 || n > (1u << 20) || m > (1u << 20)) {
        throw std::runtime_error("corrupt spectrum cache (bad dims)");
    }
    auto slurp = [&in](std::size_t count) {
        std::vector<double> v(count);
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        return v;
    };
    SpectrumResult res;
    res.sigma = slurp(n);
    res.v.resize(n);
    res.u.resize(n);
    for (std::uint64_t k = 0; k < n; ++k) res.v[k] = slurp(n);
    for (std::uint64_t k = 0; k < n; ++k) res.u[k] = slurp(m);
    res.base_point = slurp(base_len);
    in.read(reinterpret_cast<char*>(&res.fd_step), 8);
    if (!in) throw std::runtime_error("corrupt spectrum cache (truncated data)");
    out = std::move(res);
    return true;
}

} // namespace chaoscope
