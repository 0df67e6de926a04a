#include "doctest.h"

#include "chaoscope/errors.hpp"
#include "chaoscope/model.hpp"
#include "chaoscope/probes.hpp"
#include "chaoscope/rng.hpp"
#include "chaoscope/spectrum.hpp"

#include <cmath>

using namespace chaoscope;

namespace {

// m jumps by 1e-6 in the first coordinate once x[0] crosses the threshold
class StepSubject : public Subject {
public:
    explicit StepSubject(double threshold) : threshold_(threshold) {}
    std::size_t dim() const override { return 1; }
    PrecisionMode precision() const override { return PrecisionMode::Fp64; }
    LstOutput eval(std::span<const double> x) const override {
        LstOutput out;
        out.m = {x[0] >= threshold_ ? 1e-6 : 0.0};
        out.finite = true;
        return out;
    }
    std::vector<std::vector<double>> taps(std::span<const double> x) const override {
        return {eval(x).m};
    }
    std::vector<double> base() const override { return {0.0}; }

private:
    double threshold_;
};

// constant m and constant logits; nothing ever flips
class ConstantSubject : public Subject {
public:
    explicit ConstantSubject(std::size_t dim) : dim_(dim) {}
    std::size_t dim() const override { return dim_; }
    PrecisionMode precision() const override { return PrecisionMode::Fp64; }
    LstOutput eval(std::span<const double>) const override {
        LstOutput out;
        out.m.assign(dim_, 1.0);
        out.logits = {5.0, 1.0};
        out.margin = 4.0;
        out.argmax_token = 0;
        out.finite = true;
        return out;
    }
    std::vector<std::vector<double>> taps(std::span<const double> x) const override {
        return {eval(x).m};
    }
    std::vector<double> base() const override { return std::vector<double>(dim_, 0.0); }

private:
    std::size_t dim_;
};

SpectrumResult oracle_spectrum(const LinearOracle& oracle) {
    SpectrumResult s;
    s.sigma = oracle.sigma();
    for (std::size_t k = 0; k < oracle.dim(); ++k) {
        s.v.emplace_back(oracle.right_singular(k).begin(), oracle.right_singular(k).end());
        s.u.emplace_back(oracle.left_singular(k).begin(), oracle.left_singular(k).end());
    }
    return s;
}

struct ToyFixture {
    ModelConfig cfg;
    ToyModel model;
    ToyModel ref;
    EmbeddingPoint pt;
    ModelSubject subj;
    ModelSubject rsubj;
    std::vector<double> x0;
    SpectrumResult spec;

    ToyFixture()
        : cfg(make_cfg()),
          model(cfg),
          ref(cfg.with_precision(PrecisionMode::Fp64)),
          pt(make_embedding_point(cfg, 7)),
          subj(model, pt),
          rsubj(ref, pt),
          x0(subj.base()),
          spec(compute_spectrum(rsubj, x0)) {}

    static ModelConfig make_cfg() {
        ModelConfig cfg;
        cfg.seed = 42;
        cfg.precision = PrecisionMode::Fp32;
        return cfg;
    }
};

// one shared fixture; building the spectrum costs a couple hundred forwards
ToyFixture& toy() {
    static ToyFixture fixture;
    return fixture;
}

} // namespace

TEST_CASE("spearman rank correlation basics") {
    std::vector<double> a = {1.0, 2.0, 3.0, 4.0};
    std::vector<double> up = {10.0, 20.0, 30.0, 40.0};
    std::vector<double> down = {9.0, 7.0, 5.0, 3.0};
    CHECK(spearman_rank_correlation(a, up) == doctest::Approx(1.0));
    CHECK(spearman_rank_correlation(a, down) == doctest::Approx(-1.0));
}

TEST_CASE("regime classifier and smoothing") {
    SpectrumResult spec;
    spec.sigma = {10.0, 1.0, 0.01};
    RegimeThresholds t;

    CHECK(classify_regime(true, true, 0.0, spec, t) == Regime::Constant);
    CHECK(classify_regime(true, false, 500.0, spec, t) == Regime::Chaotic);
    CHECK(classify_regime(true, false, 5.0, spec, t) == Regime::SignalDominated);
    CHECK(classify_regime(true, false, 1e-8, spec, t) == Regime::Unclassified);
    CHECK(classify_regime(false, false, 5.0, spec, t) == Regime::Unclassified);

    auto rec = [](Regime r) {
        SweepRecord s;
        s.regime = r;
        return s;
    };
    std::vector<SweepRecord> seq = {
        rec(Regime::Constant), rec(Regime::Constant),  rec(Regime::Chaotic),
        rec(Regime::Constant), // single-point flicker, smoothed away
        rec(Regime::Chaotic),  rec(Regime::Chaotic),   rec(Regime::Unclassified),
        rec(Regime::Unclassified), rec(Regime::SignalDominated), rec(Regime::SignalDominated),
    };
    const auto segs = smoothed_segments(seq);
    REQUIRE(segs.size() == 3);
    CHECK(segs[0] == Regime::Constant);
    CHECK(segs[1] == Regime::Chaotic);
    CHECK(segs[2] == Regime::SignalDominated);
    CHECK(trichotomy_ordered(segs));

    const std::vector<Regime> bad = {Regime::Chaotic, Regime::Constant};
    CHECK_FALSE(trichotomy_ordered(bad));
}

TEST_CASE("directional sweep on the oracle returns sigma_k exactly") {
    LinearOracle oracle = LinearOracle::log_spaced(16, 1e-2, 1e2, 7);
    std::vector<double> x0(16, 0.0);
    OracleSubject subj(oracle, x0, PrecisionMode::Fp64);
    SpectrumResult spec = oracle_spectrum(oracle);

    SweepConfig sc;
    sc.eps_grid = log_eps_grid(1e-8, 1e-1, 8);
    for (std::size_t k : {std::size_t{0}, std::size_t{7}, std::size_t{15}}) {
        sc.directions.push_back(singular_direction(spec, k));
    }
    sc.base = x0;
    const auto recs = directional_sweep(subj, spec, sc);
    REQUIRE(recs.size() == 24);
    std::size_t idx = 0;
    for (std::size_t d = 0; d < 3; ++d) {
        const double sigma = spec.sigma[d == 0 ? 0 : d == 1 ? 7 : 15];
        for (std::size_t e = 0; e < 8; ++e, ++idx) {
            CHECK(std::fabs(recs[idx].d_eff - sigma) <= 1e-9 * sigma);
            CHECK(recs[idx].finite);
            CHECK_FALSE(recs[idx].bitwise_constant);
        }
    }
}

TEST_CASE("directional sweep flags constants with d_eff exactly zero") {
    auto& f = toy();
    SweepConfig sc;
    sc.eps_grid = {1e-14, 1e-13, 1e-12};
    for (int i = 0; i < 100; ++i) sc.directions.push_back(random_direction(64, 500 + i));
    sc.base = f.x0;
    const auto recs = directional_sweep(f.subj, f.spec, sc);
    std::size_t constant_dirs = 0;
    for (std::size_t d = 0; d < 100; ++d) {
        bool any_const = false;
        for (std::size_t e = 0; e < 3; ++e) {
            const auto& r = recs[d * 3 + e];
            if (r.bitwise_constant) {
                any_const = true;
                CHECK(r.d_eff == 0.0);
                CHECK(r.regime == Regime::Constant);
            }
        }
        constant_dirs += any_const;
    }
    // sub-representable perturbations vanish for at least 90% of directions
    CHECK(constant_dirs >= 90);
}

TEST_CASE("layerwise gain on the oracle and collapse at tiny eps on the toy") {
    LinearOracle oracle = LinearOracle::log_spaced(16, 0.5, 4.0, 3);
    std::vector<double> x0(16, 0.0);
    OracleSubject subj(oracle, x0, PrecisionMode::Fp64);
    SpectrumResult spec = oracle_spectrum(oracle);
    std::vector<Direction> dirs = {singular_direction(spec, 0), singular_direction(spec, 15)};
    const auto table = layerwise_gain(subj, x0, 1e-4, dirs);
    REQUIRE(table.n_taps == 2); // input tap + output tap
    CHECK(table.at(1, 0) == doctest::Approx(spec.sigma[0]).epsilon(1e-9));
    CHECK(table.at(1, 1) == doctest::Approx(spec.sigma[15]).epsilon(1e-9));

    // toy transformer: directional structure visible at eps = 0.1 but
    // collapsed at a microscopic eps inside the chaotic window (the window
    // sits around 1e-8 for this model; the paper's full-scale analog is
    // eps = 1e-10). Relative spread of final-layer gains shrinks.
    auto& f = toy();
    std::vector<Direction> tdirs = {singular_direction(f.spec, 0), singular_direction(f.spec, 63),
                                    coordinate_direction(64, 0), random_direction(64, 19)};
    const auto big = layerwise_gain(f.subj, f.x0, 0.1, tdirs);
    const auto small = layerwise_gain(f.subj, f.x0, 1e-8, tdirs);
    auto rel_spread = [&](const LayerGainTable& t) {
        const std::size_t last = t.n_taps - 1;
        double lo = 1e300, hi = 0.0;
        for (std::size_t d = 0; d < 4; ++d) {
            lo = std::min(lo, t.at(last, d));
            hi = std::max(hi, t.at(last, d));
        }
        return hi / lo;
    };
    CHECK(rel_spread(small) * 10.0 < rel_spread(big));

    // a bitwise-constant direction yields an all-zero gain column
    const auto zero_eps = layerwise_gain(f.subj, f.x0, 1e-14, {tdirs[0]});
    for (std::size_t tap = 0; tap < zero_eps.n_taps; ++tap) {
        CHECK(zero_eps.at(tap, 0) == 0.0);
    }
}

TEST_CASE("instability statistic arithmetic on a hand-built step function") {
    StepSubject subj(3.5e-12);
    std::vector<double> x0 = {0.0};
    std::vector<double> dir = {1.0};
    std::vector<double> eps = {1e-12, 2e-12, 3e-12, 4e-12};
    const auto r = instability_sweep(subj, x0, dir, eps);
    REQUIRE(r.instability.size() == 3);
    CHECK(r.instability[0] == 0.0);
    CHECK(r.instability[1] == 0.0);
    CHECK(r.instability[2] == doctest::Approx(1e6).epsilon(1e-9));
    CHECK(r.summary.median_inst == 0.0);
    CHECK(r.summary.mean_inst == doctest::Approx(3.3333333333e5).epsilon(1e-9));
    CHECK(r.summary.max_drift == doctest::Approx(1e-6).epsilon(1e-12));
    // right-skewed with zero median: median <= mean
    CHECK(r.summary.median_inst <= r.summary.mean_inst);
}

TEST_CASE("instability on a constant stretch is identically zero") {
    ConstantSubject subj(4);
    std::vector<double> x0 = {0.0, 0.0, 0.0, 0.0};
    std::vector<double> dir = {1.0, 0.0, 0.0, 0.0};
    std::vector<double> eps = {1e-10, 2e-10, 3e-10};
    const auto r = instability_sweep(subj, x0, dir, eps);
    CHECK(r.summary.mean_inst == 0.0);
    CHECK(r.summary.median_inst == 0.0);
    CHECK(r.summary.max_drift == 0.0);
    CHECK(r.summary.mean_margin == 4.0);
    CHECK(r.summary.min_margin == 4.0);

    std::vector<double> bad = {1e-10, 1e-10};
    CHECK_THROWS_AS(instability_sweep(subj, x0, dir, bad), std::invalid_argument);
}

TEST_CASE("micro continuity partitions steps into stalls and jumps") {
    ConstantSubject constant(4);
    std::vector<double> x0 = {0.0, 0.0, 0.0, 0.0};
    std::vector<double> dir = {1.0, 0.0, 0.0, 0.0};
    const auto all_stall = micro_continuity(constant, x0, dir, 1e-12, 50, 1e-13);
    CHECK(all_stall.stall_count == 50);
    CHECK(all_stall.jump_count == 0);
    for (const auto& st : all_stall.steps) {
        CHECK(st.stall);
        CHECK(st.cumulative_norm == 0.0);
    }

    StepSubject stepper(3.5e-12);
    std::vector<double> sx0 = {0.0};
    std::vector<double> sdir = {1.0};
    const auto mixed = micro_continuity(stepper, sx0, sdir, 1e-12, 40, 1e-13);
    CHECK(mixed.stall_count + mixed.jump_count == 40);
    CHECK(mixed.jump_count == 1);
}

TEST_CASE("decision metrics fixtures are exact") {
    // uniform 4x4
    std::vector<std::uint8_t> uniform(16, 0);
    auto m = decision_metrics(uniform, 4, 4);
    CHECK(m.flip_frequency == 0.0);
    CHECK(m.fragmentation == 1);
    CHECK(m.crossing_density == 0.0);

    // 2x2 checkerboard
    std::vector<std::uint8_t> checker = {0, 1, 1, 0};
    m = decision_metrics(checker, 2, 2);
    CHECK(m.flip_frequency == 1.0);
    CHECK(m.fragmentation == 4);
    CHECK(m.crossing_density == 1.0);

    // 4x4 half-plane: left two columns A, right two columns B
    std::vector<std::uint8_t> half(16, 0);
    for (std::size_t r = 0; r < 4; ++r) {
        half[r * 4 + 2] = 1;
        half[r * 4 + 3] = 1;
    }
    m = decision_metrics(half, 4, 4);
    CHECK(m.flip_frequency == doctest::Approx(4.0 / 24.0));
    CHECK(m.fragmentation == 2);
    CHECK(m.crossing_density == doctest::Approx(0.5));
}

TEST_CASE("find_near_tie returns the input when it is already tied") {
    auto& f = toy();
    NearTieParams params;
    params.tie_tolerance = 10.0; // every margin qualifies
    const auto same = find_near_tie(f.subj, f.x0, f.spec, params);
    CHECK(bitwise_equal(same, f.x0));
}

TEST_CASE("find_near_tie solves the oracle crossing and detects unreachable ties") {
    LinearOracle oracle = LinearOracle::log_spaced(16, 0.5, 4.0, 77, 8);
    const auto x0 = make_probe_vector(16, 4);
    OracleSubject subj(oracle, x0, PrecisionMode::Fp64);
    SpectrumResult spec = oracle_spectrum(oracle);
    NearTieParams params;
    const auto tie = find_near_tie(subj, x0, spec, params);
    CHECK(subj.eval(tie).margin <= params.tie_tolerance);

    // no winner change along the search direction: budget exhausted
    ConstantSubject constant(16);
    SpectrumResult cspec;
    cspec.sigma.assign(16, 1.0);
    for (std::size_t k = 0; k < 16; ++k) {
        std::vector<double> v(16, 0.0);
        v[k] = 1.0;
        cspec.v.push_back(v);
        cspec.u.push_back(std::move(v));
    }
    CHECK_THROWS_AS(find_near_tie(constant, cspec.v[0], cspec, params), SearchBudgetError);
}

TEST_CASE("boundary search pins the fp32 absorption threshold of the identity map") {
    // identity in fp32, base coordinate 1.0, direction e1: the largest s with
    // fl(1 + s) == 1.0 under ties-to-even is exactly 2^-24
    IdentitySubject subj({1.0, 0.5}, PrecisionMode::Fp32);
    std::vector<double> x0 = {1.0, 0.5};
    std::vector<double> e1 = {1.0, 0.0};
    const auto r = boundary_search(subj, x0, e1, "e1");
    CHECK_FALSE(r.unbounded);
    CHECK(r.s_max == std::ldexp(1.0, -24));
    CHECK(r.s_next_flips);

    // independent oracle: exhaustive scan of the fp32 lattice around 2^-24
    float probe = std::ldexp(1.0f, -24);
    for (int i = 0; i < 40; ++i) probe = std::nextafterf(probe, 0.0f);
    float last_unchanged = 0.0f;
    bool flips_after = false;
    for (int i = 0; i < 80; ++i) {
        if (static_cast<float>(1.0 + static_cast<double>(probe)) == 1.0f) {
            last_unchanged = probe;
        } else if (last_unchanged != 0.0f) {
            flips_after = true;
            break;
        }
        probe = std::nextafterf(probe, 1.0f);
    }
    CHECK(flips_after);
    CHECK(static_cast<double>(last_unchanged) == r.s_max);
}

TEST_CASE("boundary search flags deep constant regions at the cap") {
    ConstantSubject subj(4);
    std::vector<double> x0 = {0.1, 0.1, 0.1, 0.1};
    std::vector<double> e1 = {1.0, 0.0, 0.0, 0.0};
    const auto r = boundary_search(subj, x0, e1, "e1");
    CHECK(r.unbounded);
    CHECK(r.s_max > 0.0);
}

TEST_CASE("angular boundary validates its plane and satisfies the contract") {
    IdentitySubject subj({1.0, 1.0}, PrecisionMode::Fp32);
    std::vector<double> x0 = {1.0, 1.0};
    std::vector<double> a = {1.0, 0.0};
    std::vector<double> b = {0.0, 1.0};
    const auto results = angular_boundary(subj, x0, a, b, 8);
    REQUIRE(results.size() == 8);
    for (const auto& r : results) {
        CHECK_FALSE(r.unbounded);
        CHECK(r.s_next_flips);
        CHECK(r.s_max > 0.0);
    }
    // theta = 0 is the pure e1 direction
    CHECK(results[0].s_max == std::ldexp(1.0, -24));

    std::vector<double> skew = {0.8, 0.6};
    CHECK_THROWS_AS(angular_boundary(subj, x0, a, skew, 8), std::invalid_argument);
}

TEST_CASE("spectrum boundary on the asymmetric-precision oracle is sigma-driven") {
    LinearOracle oracle = LinearOracle::log_spaced(64, 1e-3, 1e3, 7);
    const auto target = make_probe_vector(64, 11, 0.0625, 0.0, PointProfile::Binade);
    const auto x0 = oracle.preimage(target);
    OracleSubject subj(oracle, x0, PrecisionMode::Fp64);
    subj.with_storage(PrecisionMode::Fp32);
    SpectrumResult spec = oracle_spectrum(oracle);
    const auto results = spectrum_boundary(subj, x0, spec);
    REQUIRE(results.size() == 64);
    for (const auto& r : results) {
        CHECK(r.s_next_flips);
        CHECK(r.s_max > 0.0);
    }
    // boundary inversely proportional to gain: s_max(v1)/s_max(vd) ~ sigma_d/sigma_1
    const double measured = results.front().s_max / results.back().s_max;
    const double expected = spec.sigma.back() / spec.sigma.front();
    CHECK(measured / expected <= 4.0);
    CHECK(expected / measured <= 4.0);
}

TEST_CASE("noise averaging degenerates to d_eff and is exact on the oracle") {
    auto& f = toy();
    const double eps = 1e-9;
    // n = 1, zero noise: bitwise equal to the sweep's d_eff
    SweepConfig sc;
    sc.eps_grid = {eps};
    sc.directions = {singular_direction(f.spec, 0)};
    sc.base = f.x0;
    const auto recs = directional_sweep(f.subj, f.spec, sc);
    const double kappa = noise_averaged_kappa(f.subj, f.x0, f.spec.v[0], eps, 1, 0.0, 1);
    CHECK(std::bit_cast<std::uint64_t>(kappa) == std::bit_cast<std::uint64_t>(recs[0].d_eff));

    // oracle: linearity cancels the noise exactly
    LinearOracle oracle = LinearOracle::log_spaced(16, 1e-2, 1e2, 7);
    std::vector<double> x0(16, 0.0);
    OracleSubject subj(oracle, x0, PrecisionMode::Fp64);
    SpectrumResult spec = oracle_spectrum(oracle);
    for (std::size_t n : {std::size_t{1}, std::size_t{10}}) {
        const double k0 = noise_averaged_kappa(subj, x0, spec.v[0], 1e-3, n, 1e-9, 5);
        CHECK(std::fabs(k0 - spec.sigma[0]) <= 1e-9 * spec.sigma[0]);
    }

    CHECK_THROWS_AS(noise_averaged_kappa(f.subj, f.x0, f.spec.v[0], eps, 0, 0.0, 1),
                    std::invalid_argument);
}

TEST_CASE("sweep config validation rejects malformed inputs") {
    auto& f = toy();
    SweepConfig sc;
    sc.base = f.x0;
    sc.directions = {singular_direction(f.spec, 0)};
    sc.eps_grid = {1e-3, 1e-3}; // not strictly increasing
    CHECK_THROWS_AS(directional_sweep(f.subj, f.spec, sc), std::invalid_argument);
    sc.eps_grid = {};
    CHECK_THROWS_AS(directional_sweep(f.subj, f.spec, sc), std::invalid_argument);
    sc.eps_grid = {1e-3};
    sc.directions.clear();
    CHECK_THROWS_AS(directional_sweep(f.subj, f.spec, sc), std::invalid_argument);
    sc.directions = {Direction{"bad", std::vector<double>(64, 1.0)}}; // not unit norm
    CHECK_THROWS_AS(directional_sweep(f.subj, f.spec, sc), std::invalid_argument);
}
