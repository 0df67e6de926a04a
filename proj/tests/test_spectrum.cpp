#include "doctest.h"

#include "chaoscope/model.hpp"
#include "chaoscope/probes.hpp"
#include "chaoscope/rng.hpp"
#include "chaoscope/spectrum.hpp"

#include <cmath>
#include <filesystem>

using namespace chaoscope;

namespace {

Matrix from_rows(std::size_t rows, std::size_t cols, std::initializer_list<double> vals) {
    Matrix m(rows, cols);
    std::size_t i = 0;
    for (double v : vals) m.data[i++] = v;
    return m;
}

double reconstruction_error(const Matrix& j, const SpectrumResult& s) {
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < j.rows; ++r) {
        for (std::size_t c = 0; c < j.cols; ++c) {
            double rec = 0.0;
            for (std::size_t k = 0; k < s.sigma.size(); ++k) {
                rec += s.sigma[k] * s.u[k][r] * s.v[k][c];
            }
            const double d = j.at(r, c) - rec;
            num += d * d;
            den += j.at(r, c) * j.at(r, c);
        }
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

void check_orthonormal(const SpectrumResult& s) {
    const std::size_t n = s.v.size();
    for (std::size_t a = 0; a < n; ++a) {
        CHECK(l2_norm(s.v[a]) == doctest::Approx(1.0).epsilon(1e-12));
        for (std::size_t b = a + 1; b < n; ++b) {
            double ip = 0.0;
            for (std::size_t i = 0; i < s.v[a].size(); ++i) ip += s.v[a][i] * s.v[b][i];
            CHECK(std::fabs(ip) <= 1e-10);
        }
    }
}

} // namespace

TEST_CASE("fd_jacobian recovers analytic derivatives") {
    // f(x) = x^2 elementwise at (1, 2) -> diag(2, 4)
    VectorFn square = [](std::span<const double> x) {
        std::vector<double> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * x[i];
        return y;
    };
    std::vector<double> at = {1.0, 2.0};
    const Matrix j = fd_jacobian(square, at, 1e-6);
    CHECK(j.at(0, 0) == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(j.at(1, 1) == doctest::Approx(4.0).epsilon(1e-8));
    CHECK(std::fabs(j.at(0, 1)) <= 1e-8);
    CHECK(std::fabs(j.at(1, 0)) <= 1e-8);

    CHECK_THROWS_AS(fd_jacobian(square, at, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(fd_jacobian(square, at, -1.0), std::invalid_argument);
}

TEST_CASE("fd_jacobian on the linear oracle reproduces A at any reasonable step") {
    LinearOracle oracle = LinearOracle::log_spaced(12, 0.25, 8.0, 31);
    const auto a = oracle.materialize();
    VectorFn f = [&](std::span<const double> x) {
        return oracle.forward(x, PrecisionMode::Fp64, ReductionOrder::sequential());
    };
    std::vector<double> x0 = make_probe_vector(12, 3);
    double norm_a = 0.0;
    for (double v : a) norm_a += v * v;
    norm_a = std::sqrt(norm_a);
    for (double step : {1e-6, 1e-4, 1e-3}) {
        const Matrix j = fd_jacobian(f, x0, step);
        double err = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            err += (j.data[i] - a[i]) * (j.data[i] - a[i]);
        }
        CHECK(std::sqrt(err) <= 1e-9 * norm_a);
    }
}

TEST_CASE("svd of a diagonal matrix") {
    const Matrix j = from_rows(3, 3, {3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0});
    const SpectrumResult s = svd(j);
    CHECK(s.sigma[0] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(s.sigma[1] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(s.sigma[2] == doctest::Approx(1.0).epsilon(1e-14));
    // v_k = +/- e_k with the sign convention making the big component positive
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(s.v[k][i] == doctest::Approx(i == k ? 1.0 : 0.0).epsilon(1e-13));
        }
    }
}

TEST_CASE("svd of a rank-1 outer product") {
    std::vector<double> a = {1.0, -2.0, 0.5, 3.0};
    std::vector<double> b = {2.0, 1.0, -1.0};
    Matrix j(4, 3);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 3; ++c) j.at(r, c) = a[r] * b[c];
    }
    const SpectrumResult s = svd(j);
    CHECK(s.sigma[0] == doctest::Approx(l2_norm(a) * l2_norm(b)).epsilon(1e-12));
    for (std::size_t k = 1; k < s.sigma.size(); ++k) {
        CHECK(s.sigma[k] <= 1e-10 * s.sigma[0]);
    }
}

TEST_CASE("svd reconstruction and orthogonality on a random matrix") {
    SplitMix64 rng(404);
    Matrix j(8, 8);
    for (double& v : j.data) v = rng.next_gaussian();
    const SpectrumResult s = svd(j);
    CHECK(reconstruction_error(j, s) <= 1e-8);
    check_orthonormal(s);
    for (std::size_t k = 1; k < s.sigma.size(); ++k) {
        CHECK(s.sigma[k] <= s.sigma[k - 1]);
    }
}

TEST_CASE("singular values are invariant under orthogonal left multiplication") {
    SplitMix64 rng(8);
    Matrix j(10, 10);
    for (double& v : j.data) v = rng.next_gaussian();

    // seeded Householder reflector H = I - 2 w w^T
    std::vector<double> w(10);
    for (double& v : w) v = rng.next_gaussian();
    const double inv = 1.0 / l2_norm(w);
    for (double& v : w) v *= inv;
    Matrix hj(10, 10);
    for (std::size_t r = 0; r < 10; ++r) {
        for (std::size_t c = 0; c < 10; ++c) {
            double sum = 0.0;
            for (std::size_t k = 0; k < 10; ++k) {
                const double h = (r == k ? 1.0 : 0.0) - 2.0 * w[r] * w[k];
                sum += h * j.at(k, c);
            }
            hj.at(r, c) = sum;
        }
    }
    const SpectrumResult s1 = svd(j);
    const SpectrumResult s2 = svd(hj);
    for (std::size_t k = 0; k < 10; ++k) {
        CHECK(std::fabs(s1.sigma[k] - s2.sigma[k]) <= 1e-10 * std::max(1.0, s1.sigma[0]));
    }
}

TEST_CASE("svd of the transpose swaps U and V up to sign") {
    SplitMix64 rng(99);
    Matrix j(6, 6);
    for (double& v : j.data) v = rng.next_gaussian();
    Matrix jt(6, 6);
    for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t c = 0; c < 6; ++c) jt.at(c, r) = j.at(r, c);
    }
    const SpectrumResult s = svd(j);
    const SpectrumResult st = svd(jt);
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(std::fabs(s.sigma[k] - st.sigma[k]) <= 1e-10 * std::max(1.0, s.sigma[0]));
        // columns match up to a global sign per k
        double dot_uv = 0.0;
        for (std::size_t i = 0; i < 6; ++i) dot_uv += s.u[k][i] * st.v[k][i];
        CHECK(std::fabs(std::fabs(dot_uv) - 1.0) <= 1e-8);
    }
}

TEST_CASE("toy transformer spectrum satisfies the orthogonality invariants") {
    ModelConfig cfg;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_ff = 64;
    cfg.vocab_size = 48;
    cfg.seq_len = 4;
    cfg.seed = 17;
    cfg.precision = PrecisionMode::Fp64;
    ToyModel ref(cfg);
    const EmbeddingPoint pt = make_embedding_point(cfg, 11);
    ModelSubject subj(ref, pt);
    const SpectrumResult s = compute_spectrum(subj, subj.base());
    check_orthonormal(s);
    CHECK(s.sigma_max() > 0.0);
    CHECK(s.fd_step > 0.0);
    CHECK(s.base_point.size() == cfg.d_model);
}

TEST_CASE("spectrum cache round trips and honors its key") {
    SplitMix64 rng(3);
    Matrix j(5, 5);
    for (double& v : j.data) v = rng.next_gaussian();
    SpectrumResult s = svd(j);
    s.base_point = {1.0, 2.0, 3.0, 4.0, 5.0};
    s.fd_step = 1e-5;

    const SpectrumKey key{1234, hash_doubles(s.base_point), s.fd_step};
    const auto tmp = std::filesystem::temp_directory_path() / "chaoscope_spec_cache.bin";
    save_spectrum(tmp, s, key);

    SpectrumResult loaded;
    REQUIRE(load_spectrum(tmp, key, loaded));
    CHECK(bitwise_equal(loaded.sigma, s.sigma));
    for (std::size_t k = 0; k < s.v.size(); ++k) {
        CHECK(bitwise_equal(loaded.v[k], s.v[k]));
        CHECK(bitwise_equal(loaded.u[k], s.u[k]));
    }
    CHECK(bitwise_equal(loaded.base_point, s.base_point));
    CHECK(loaded.fd_step == s.fd_step);

    // different key: cache miss, not corruption
    SpectrumResult ignored;
    CHECK_FALSE(load_spectrum(tmp, SpectrumKey{1235, key.base_hash, key.fd_step}, ignored));
    CHECK_FALSE(load_spectrum("/nonexistent/path.bin", key, ignored));
    std::filesystem::remove(tmp);
}
