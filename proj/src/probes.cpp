#include "chaoscope/probes.hpp"
#include "chaoscope/errors.hpp"
#include "chaoscope/parallel.hpp"
#include "chaoscope/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace chaoscope {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_unit(std::span<const double> v, const char* what) {
    const double n = l2_norm(v);
    if (std::fabs(n - 1.0) > 1e-10) {
        throw std::invalid_argument(std::string(what) + ": direction is not unit norm");
    }
}

std::vector<double> offset_point(std::span<const double> x0, std::span<const double> v,
                                 double scale) {
    std::vector<double> y(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) y[i] = x0[i] + scale * v[i];
    return y;
}

} // namespace

// --- vocabulary ------------------------------------------------------------

Direction singular_direction(const SpectrumResult& spectrum, std::size_t k) {
    if (k >= spectrum.v.size()) {
        throw std::invalid_argument("singular direction index out of range");
    }
    return {"v" + std::to_string(k + 1), spectrum.v[k]};
}

Direction coordinate_direction(std::size_t dim, std::size_t index) {
    if (index >= dim) throw std::invalid_argument("coordinate direction index out of range");
    std::vector<double> v(dim, 0.0);
    v[index] = 1.0;
    return {"e" + std::to_string(index), std::move(v)};
}

Direction random_direction(std::size_t dim, std::uint64_t seed) {
    return {"rand" + std::to_string(seed), random_unit_direction(dim, seed)};
}

std::vector<double> log_eps_grid(double lo, double hi, std::size_t points) {
    if (!(lo > 0.0) || !(hi > lo) || points < 2) {
        throw std::invalid_argument("log_eps_grid: need 0 < lo < hi and >= 2 points");
    }
    std::vector<double> grid(points);
    const double llo = std::log10(lo);
    const double lhi = std::log10(hi);
    for (std::size_t i = 0; i < points; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(points - 1);
        grid[i] = std::pow(10.0, llo + t * (lhi - llo));
    }
    grid.front() = lo;
    grid.back() = hi;
    return grid;
}

std::string_view to_string(Regime regime) {
    switch (regime) {
        case Regime::Constant: return "constant";
        case Regime::Chaotic: return "chaotic";
        case Regime::SignalDominated: return "signal";
        case Regime::Unclassified: return "unclassified";
    }
    return "unclassified";
}

Regime classify_regime(bool finite, bool bitwise_constant, double d_eff,
                       const SpectrumResult& spectrum, const RegimeThresholds& t) {
    if (!finite) return Regime::Unclassified;
    if (bitwise_constant) return Regime::Constant;
    if (d_eff > t.c_chaos * spectrum.sigma_max()) return Regime::Chaotic;
    if (d_eff >= t.signal_lo * spectrum.sigma_min() &&
        d_eff <= t.signal_hi * spectrum.sigma_max()) {
        return Regime::SignalDominated;
    }
    return Regime::Unclassified;
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double norm_diff(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

namespace {

std::vector<double> ranks_with_ties(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    return rank;
}

} // namespace

double spearman_rank_correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("spearman: need two equal-length samples");
    }
    const std::vector<double> ra = ranks_with_ties(a);
    const std::vector<double> rb = ranks_with_ties(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = ra[i] - ma;
        const double db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

// --- directional sweep -------------------------------------------------------

void SweepConfig::validate(std::size_t dim) const {
    if (eps_grid.empty()) throw std::invalid_argument("sweep: empty eps grid");
    double prev = 0.0;
    for (double e : eps_grid) {
        if (!(e > prev)) {
            throw std::invalid_argument("sweep: eps grid must be strictly increasing and positive");
        }
        prev = e;
    }
    if (directions.empty()) throw std::invalid_argument("sweep: no directions");
    for (const auto& d : directions) {
        if (d.v.size() != dim) throw std::invalid_argument("sweep: direction dimension mismatch");
        check_unit(d.v, "sweep");
    }
    if (base.size() != dim) throw std::invalid_argument("sweep: base point dimension mismatch");
}

std::vector<SweepRecord> directional_sweep(const Subject& subject,
                                           const SpectrumResult& spectrum,
                                           const SweepConfig& cfg) {
    cfg.validate(subject.dim());
    const LstOutput base = subject.eval(cfg.base);
    const std::size_t n_eps = cfg.eps_grid.size();
    const std::size_t n_dir = cfg.directions.size();
    std::vector<SweepRecord> records(n_dir * n_eps);

    parallel_for(n_dir * n_eps, [&](std::size_t idx) {
        const std::size_t di = idx / n_eps;
        const std::size_t ei = idx % n_eps;
        const double eps = cfg.eps_grid[ei];
        const Direction& dir = cfg.directions[di];

        SweepRecord rec;
        rec.eps = eps;
        rec.direction_label = dir.label;
        if (!base.finite) {
            rec.finite = false;
            rec.regime = Regime::Unclassified;
            records[idx] = std::move(rec);
            return;
        }
        const LstOutput pert = subject.eval(offset_point(cfg.base, dir.v, eps));
        rec.finite = pert.finite;
        if (!pert.finite) {
            rec.regime = Regime::Unclassified;
            records[idx] = std::move(rec);
            return;
        }
        rec.bitwise_constant = bitwise_equal(pert.m, base.m);
        rec.d_eff = rec.bitwise_constant ? 0.0 : norm_diff(pert.m, base.m) / eps;
        rec.regime = classify_regime(true, rec.bitwise_constant, rec.d_eff, spectrum,
                                     cfg.thresholds);
        records[idx] = std::move(rec);
    });
    return records;
}

std::vector<Regime> smoothed_segments(std::span<const SweepRecord> records) {
    // collapse into runs
    std::vector<std::pair<Regime, std::size_t>> runs;
    for (const auto& rec : records) {
        if (!runs.empty() && runs.back().first == rec.regime) {
            ++runs.back().second;
        } else {
            runs.emplace_back(rec.regime, 1);
        }
    }
    std::vector<Regime> segments;
    for (const auto& [regime, len] : runs) {
        if (len < 2) continue; // single-point flicker
        if (regime == Regime::Unclassified) continue;
        if (!segments.empty() && segments.back() == regime) continue;
        segments.push_back(regime);
    }
    return segments;
}

bool trichotomy_ordered(std::span<const Regime> segments) {
    auto order_of = [](Regime r) {
        switch (r) {
            case Regime::Constant: return 0;
            case Regime::Chaotic: return 1;
            case Regime::SignalDominated: return 2;
            case Regime::Unclassified: return 3;
        }
        return 3;
    };
    int prev = -1;
    for (Regime r : segments) {
        const int o = order_of(r);
        if (o == 3) return false;
        if (o < prev) return false;
        prev = o;
    }
    return true;
}

// --- layer-wise propagation -----------------------------------------------

LayerGainTable layerwise_gain(const Subject& subject, std::span<const double> x0,
                              double eps, const std::vector<Direction>& directions) {
    if (!(eps > 0.0)) throw std::invalid_argument("layerwise_gain: eps must be positive");
    if (directions.empty()) throw std::invalid_argument("layerwise_gain: no directions");
    for (const auto& d : directions) check_unit(d.v, "layerwise_gain");

    const auto base_taps = subject.taps(x0);
    LayerGainTable table;
    table.eps = eps;
    table.n_taps = base_taps.size();
    table.direction_labels.reserve(directions.size());
    for (const auto& d : directions) table.direction_labels.push_back(d.label);
    table.gains.assign(table.n_taps * directions.size(), 0.0);

    parallel_for(directions.size(), [&](std::size_t di) {
        const auto pert_taps = subject.taps(offset_point(x0, directions[di].v, eps));
        for (std::size_t t = 0; t < table.n_taps; ++t) {
            table.gains[t * directions.size() + di] =
                norm_diff(pert_taps[t], base_taps[t]) / eps;
        }
    });
    return table;
}

// --- instability statistic ----------------------------------------------------

InstabilityResult instability_sweep(const Subject& subject, std::span<const double> x0,
                                    std::span<const double> direction,
                                    std::span<const double> eps_sequence) {
    if (eps_sequence.size() < 2) {
        throw std::invalid_argument("instability_sweep: need at least two eps values");
    }
    for (std::size_t i = 1; i < eps_sequence.size(); ++i) {
        if (!(eps_sequence[i] > eps_sequence[i - 1])) {
            throw std::invalid_argument("instability_sweep: eps sequence must be strictly increasing");
        }
    }
    check_unit(direction, "instability_sweep");

    const std::size_t t_count = eps_sequence.size();
    std::vector<LstOutput> outs(t_count);
    parallel_for(t_count, [&](std::size_t i) {
        outs[i] = subject.eval(offset_point(x0, direction, eps_sequence[i]));
    });
    for (std::size_t i = 0; i < t_count; ++i) {
        if (!outs[i].finite) {
            throw NumericalAbort("instability_sweep: non-finite forward at eps index " +
                                 std::to_string(i));
        }
    }

    InstabilityResult res;
    res.eps.assign(eps_sequence.begin(), eps_sequence.end());
    res.instability.resize(t_count - 1);
    res.margins.resize(t_count);
    res.drift.resize(t_count);
    for (std::size_t i = 0; i < t_count; ++i) {
        res.margins[i] = outs[i].margin;
        res.drift[i] = norm_diff(outs[i].m, outs[0].m);
    }
    for (std::size_t i = 1; i < t_count; ++i) {
        res.instability[i - 1] =
            norm_diff(outs[i].m, outs[i - 1].m) / (eps_sequence[i] - eps_sequence[i - 1]);
    }

    auto& s = res.summary;
    s.mean_inst = std::accumulate(res.instability.begin(), res.instability.end(), 0.0) /
                  static_cast<double>(res.instability.size());
    std::vector<double> sorted = res.instability;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    s.median_inst = sorted.size() % 2 == 1 ? sorted[mid]
                                           : 0.5 * (sorted[mid - 1] + sorted[mid]);
    s.max_drift = *std::max_element(res.drift.begin(), res.drift.end());
    s.mean_margin = std::accumulate(res.margins.begin(), res.margins.end(), 0.0) /
                    static_cast<double>(res.margins.size());
    s.min_margin = *std::min_element(res.margins.begin(), res.margins.end());
    return res;
}

// --- micro-continuity ----------------------------------------------------------

MicroContinuityResult micro_continuity(const Subject& subject, std::span<const double> x0,
                                       std::span<const double> direction, double start_s,
                                       std::size_t n_steps, double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("micro_continuity: delta must be positive");
    if (n_steps == 0) throw std::invalid_argument("micro_continuity: n_steps must be positive");
    check_unit(direction, "micro_continuity");

    const std::size_t points = n_steps + 1;
    std::vector<LstOutput> outs(points);
    parallel_for(points, [&](std::size_t i) {
        const double s = start_s + static_cast<double>(i) * delta;
        outs[i] = subject.eval(offset_point(x0, direction, s));
    });
    for (std::size_t i = 0; i < points; ++i) {
        if (!outs[i].finite) {
            throw NumericalAbort("micro_continuity: non-finite forward at step " +
                                 std::to_string(i));
        }
    }

    MicroContinuityResult res;
    res.start_s = start_s;
    res.delta = delta;
    res.steps.resize(n_steps);
    for (std::size_t i = 1; i < points; ++i) {
        MicroStep& st = res.steps[i - 1];
        st.s = start_s + static_cast<double>(i) * delta;
        st.stall = bitwise_equal(outs[i].m, outs[i - 1].m);
        st.consec_norm = st.stall ? 0.0 : norm_diff(outs[i].m, outs[i - 1].m);
        st.cumulative_norm = norm_diff(outs[i].m, outs[0].m);
        if (st.stall) {
            ++res.stall_count;
        } else {
            ++res.jump_count;
        }
    }
    return res;
}

// --- decision maps ---------------------------------------------------------------

DecisionMapMetrics decision_metrics(std::span<const std::uint8_t> grid,
                                    std::size_t rows, std::size_t cols) {
    if (grid.size() != rows * cols || rows == 0 || cols == 0) {
        throw std::invalid_argument("decision_metrics: bad grid shape");
    }
    DecisionMapMetrics m;

    // flip frequency over 4-neighbor adjacent pairs
    std::size_t pairs = 0, differing = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c + 1 < cols; ++c) {
            ++pairs;
            if (grid[r * cols + c] != grid[r * cols + c + 1]) ++differing;
        }
    }
    for (std::size_t r = 0; r + 1 < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            ++pairs;
            if (grid[r * cols + c] != grid[(r + 1) * cols + c]) ++differing;
        }
    }
    m.flip_frequency = pairs == 0 ? 0.0
                                  : static_cast<double>(differing) / static_cast<double>(pairs);

    // 4-connected components over both labels
    std::vector<std::uint8_t> seen(rows * cols, 0);
    std::size_t components = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < grid.size(); ++start) {
        if (seen[start]) continue;
        ++components;
        const std::uint8_t label = grid[start];
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t cell = stack.back();
            stack.pop_back();
            const std::size_t r = cell / cols;
            const std::size_t c = cell % cols;
            const std::size_t neighbors[4] = {
                c > 0 ? cell - 1 : cell,
                c + 1 < cols ? cell + 1 : cell,
                r > 0 ? cell - cols : cell,
                r + 1 < rows ? cell + cols : cell,
            };
            for (std::size_t nb : neighbors) {
                if (nb != cell && !seen[nb] && grid[nb] == label) {
                    seen[nb] = 1;
                    stack.push_back(nb);
                }
            }
        }
    }
    m.fragmentation = components;

    // crossings per line scan
    std::size_t crossings = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c + 1 < cols; ++c) {
            if (grid[r * cols + c] != grid[r * cols + c + 1]) ++crossings;
        }
    }
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t r = 0; r + 1 < rows; ++r) {
            if (grid[r * cols + c] != grid[(r + 1) * cols + c]) ++crossings;
        }
    }
    m.crossing_density = static_cast<double>(crossings) / static_cast<double>(rows + cols);
    return m;
}

DecisionMapResult decision_map(const Subject& subject, std::span<const double> x0,
                               std::span<const double> dir_i, std::span<const double> dir_j,
                               double eps_range, double step) {
    if (!(eps_range > 0.0) || !(step > 0.0)) {
        throw std::invalid_argument("decision_map: eps_range and step must be positive");
    }
    check_unit(dir_i, "decision_map");
    check_unit(dir_j, "decision_map");
    const std::size_t half = static_cast<std::size_t>(std::llround(eps_range / step));
    const std::size_t n = 2 * half + 1;
    if (n * n > 1000000) {
        throw std::invalid_argument("decision_map: grid exceeds 10^6 cells");
    }

    const LstOutput base = subject.eval(x0);
    if (!base.finite) throw NumericalAbort("decision_map: non-finite base point");
    const int token_a = base.argmax_token;
    // runner-up, lowest index on ties
    int token_b = token_a == 0 ? 1 : 0;
    for (int t = 0; t < static_cast<int>(base.logits.size()); ++t) {
        if (t == token_a) continue;
        if (base.logits[t] > base.logits[token_b]) token_b = t;
    }

    DecisionMapResult res;
    res.n = n;
    res.token_a = token_a;
    res.token_b = token_b;
    res.eps_range = eps_range;
    res.step = step;
    res.offsets.resize(n);
    const double center = static_cast<double>(half);
    for (std::size_t k = 0; k < n; ++k) {
        res.offsets[k] = (static_cast<double>(k) - center) * step;
    }
    res.grid.assign(n * n, 0);
    std::vector<std::uint8_t> overflow(n * n, 0);

    parallel_for(n * n, [&](std::size_t idx) {
        const std::size_t gi = idx / n;
        const std::size_t gj = idx % n;
        std::vector<double> y(x0.size());
        const double oi = res.offsets[gi];
        const double oj = res.offsets[gj];
        for (std::size_t c = 0; c < x0.size(); ++c) {
            y[c] = x0[c] + oi * dir_i[c] + oj * dir_j[c];
        }
        const LstOutput out = subject.eval(y);
        if (!out.finite) {
            throw NumericalAbort("decision_map: non-finite evaluation at grid cell " +
                                 std::to_string(idx));
        }
        const double la = out.logits[static_cast<std::size_t>(token_a)];
        const double lb = out.logits[static_cast<std::size_t>(token_b)];
        int winner;
        if (la == lb) {
            winner = std::min(token_a, token_b);
        } else {
            winner = la > lb ? token_a : token_b;
        }
        res.grid[idx] = winner == token_a ? 0 : 1;
        if (out.argmax_token != token_a && out.argmax_token != token_b) {
            overflow[idx] = 1;
        }
    });
    res.overflow_cells = static_cast<std::size_t>(
        std::count(overflow.begin(), overflow.end(), std::uint8_t{1}));
    res.metrics = decision_metrics(res.grid, n, n);
    return res;
}

// --- near-tie construction -------------------------------------------------------

std::vector<double> find_near_tie(const Subject& subject, std::span<const double> start,
                                  const SpectrumResult& spectrum, const NearTieParams& params) {
    const LstOutput at_start = subject.eval(start);
    if (!at_start.finite) throw NumericalAbort("find_near_tie: non-finite start point");
    if (at_start.margin <= params.tie_tolerance) {
        return {start.begin(), start.end()};
    }
    const std::vector<double>& v1 = spectrum.v.at(0);

    auto eval_at = [&](double t) {
        LstOutput out = subject.eval(offset_point(start, v1, t));
        if (!out.finite) throw NumericalAbort("find_near_tie: non-finite evaluation");
        return out;
    };

    // line search for an argmax change along +/- v1; the winner flip is where
    // the top-2 gap of the flanking pair crosses zero
    const int home = at_start.argmax_token;
    double t_lo = 0.0; // argmax == home here
    double t_hi = 0.0;
    bool found = false;
    for (double t = params.t_init; t <= params.t_cap; t *= 2.0) {
        if (eval_at(t).argmax_token != home) {
            t_hi = t;
            found = true;
            break;
        }
        if (eval_at(-t).argmax_token != home) {
            t_hi = -t;
            found = true;
            break;
        }
    }
    if (!found) {
        throw SearchBudgetError("find_near_tie: no near-tie reachable along v1");
    }

    // bisect on the winner boundary; the margin collapses as the interval
    // tightens around the flip
    for (int iter = 0; iter < params.max_bisect; ++iter) {
        const double mid = 0.5 * (t_lo + t_hi);
        const std::vector<double> y = offset_point(start, v1, mid);
        const LstOutput out = subject.eval(y);
        if (!out.finite) throw NumericalAbort("find_near_tie: non-finite evaluation");
        if (out.margin <= params.tie_tolerance) {
            return y;
        }
        if (out.argmax_token == home) {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    throw SearchBudgetError("find_near_tie: bisection budget exhausted before margin <= tol");
}

// --- boundary searches ----------------------------------------------------------

BoundaryResult boundary_search(const Subject& subject, std::span<const double> x0,
                               std::span<const double> direction, std::string label,
                               const BoundarySearchParams& params) {
    check_unit(direction, "boundary_search");
    const LstOutput base = subject.eval(x0);
    if (!base.finite) throw NumericalAbort("boundary_search: non-finite base point");

    BoundaryResult res;
    res.direction_label = std::move(label);

    auto changed = [&](float s) {
        ++res.search_evals;
        const LstOutput out = subject.eval(offset_point(x0, direction, static_cast<double>(s)));
        if (!out.finite) throw NumericalAbort("boundary_search: non-finite evaluation");
        return !bitwise_equal(out.m, base.m);
    };

    float lo, hi;
    const float s_init = static_cast<float>(params.s_init);
    if (!changed(s_init)) {
        lo = s_init;
        float s = s_init;
        for (;;) {
            s *= 2.0f;
            if (static_cast<double>(s) > params.s_cap) {
                res.unbounded = true;
                res.s_max = static_cast<double>(lo);
                return res;
            }
            if (changed(s)) {
                hi = s;
                break;
            }
            lo = s;
        }
    } else {
        lo = 0.0f;
        hi = s_init;
    }

    // binary search on the fp32 lattice
    for (int iter = 0; iter < params.max_bisect; ++iter) {
        const float next_up = std::nextafterf(lo, std::numeric_limits<float>::infinity());
        if (next_up >= hi) break; // adjacent
        const float mid =
            static_cast<float>(0.5 * (static_cast<double>(lo) + static_cast<double>(hi)));
        if (mid <= lo || mid >= hi) break;
        if (changed(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    // ULP refinement: walk lo upward until the next lattice point flips
    for (int guard = 0; guard < 100000; ++guard) {
        const float next_up = std::nextafterf(lo, std::numeric_limits<float>::infinity());
        if (next_up >= hi) break;
        if (changed(next_up)) {
            hi = next_up;
            break;
        }
        lo = next_up;
    }

    res.s_max = static_cast<double>(lo);
    const float s_next = std::nextafterf(lo, std::numeric_limits<float>::infinity());
    res.s_next_flips = changed(s_next);
    return res;
}

std::vector<BoundaryResult> angular_boundary(const Subject& subject, std::span<const double> x0,
                                             std::span<const double> dir_a,
                                             std::span<const double> dir_b,
                                             std::size_t n_angles,
                                             const BoundarySearchParams& params) {
    if (n_angles == 0) throw std::invalid_argument("angular_boundary: n_angles must be positive");
    check_unit(dir_a, "angular_boundary");
    check_unit(dir_b, "angular_boundary");
    double ip = 0.0;
    for (std::size_t i = 0; i < dir_a.size(); ++i) ip += dir_a[i] * dir_b[i];
    if (std::fabs(ip) > 1e-10) {
        throw std::invalid_argument("angular_boundary: directions are not orthogonal");
    }

    std::vector<BoundaryResult> results(n_angles);
    parallel_for(n_angles, [&](std::size_t k) {
        const double theta = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(n_angles);
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        std::vector<double> delta(dir_a.size());
        for (std::size_t i = 0; i < delta.size(); ++i) {
            delta[i] = c * dir_a[i] + s * dir_b[i];
        }
        BoundaryResult r =
            boundary_search(subject, x0, delta, "theta" + std::to_string(k), params);
        r.theta = theta;
        results[k] = std::move(r);
    });
    return results;
}

std::vector<BoundaryResult> spectrum_boundary(const Subject& subject, std::span<const double> x0,
                                              const SpectrumResult& spectrum,
                                              const BoundarySearchParams& params) {
    const std::size_t n = spectrum.v.size();
    std::vector<BoundaryResult> results(n);
    parallel_for(n, [&](std::size_t k) {
        BoundaryResult r = boundary_search(subject, x0, spectrum.v[k],
                                           "v" + std::to_string(k + 1), params);
        r.sigma = spectrum.sigma[k];
        results[k] = std::move(r);
    });
    return results;
}

// --- noise averaging --------------------------------------------------------------

double noise_averaged_kappa(const Subject& subject, std::span<const double> x0,
                            std::span<const double> direction, double eps,
                            std::size_t n_samples, double noise_mag,
                            std::uint64_t noise_seed) {
    if (n_samples == 0) throw std::invalid_argument("noise_averaged_kappa: n_samples >= 1");
    if (!(eps > 0.0)) throw std::invalid_argument("noise_averaged_kappa: eps must be positive");
    if (noise_mag < 0.0) throw std::invalid_argument("noise_averaged_kappa: negative noise");
    check_unit(direction, "noise_averaged_kappa");

    std::vector<double> eta(n_samples, 0.0);
    if (noise_mag > 0.0) {
        SplitMix64 rng(derive_seed(noise_seed, 0xA77));
        for (double& e : eta) e = rng.next_uniform(-noise_mag, noise_mag);
    }

    const std::size_t dim = x0.size();
    std::vector<std::vector<double>> pert(n_samples), plain(n_samples);
    parallel_for(n_samples, [&](std::size_t j) {
        const LstOutput a = subject.eval(offset_point(x0, direction, eps + eta[j]));
        const LstOutput b = subject.eval(offset_point(x0, direction, eta[j]));
        if (!a.finite || !b.finite) {
            throw NumericalAbort("noise_averaged_kappa: non-finite evaluation");
        }
        pert[j] = a.m;
        plain[j] = b.m;
    });

    std::vector<double> mean_pert(dim, 0.0), mean_plain(dim, 0.0);
    for (std::size_t j = 0; j < n_samples; ++j) {
        for (std::size_t i = 0; i < dim; ++i) {
            mean_pert[i] += pert[j][i];
            mean_plain[i] += plain[j][i];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n_samples);
    for (std::size_t i = 0; i < dim; ++i) {
        mean_pert[i] *= inv_n;
        mean_plain[i] *= inv_n;
    }
    return norm_diff(mean_pert, mean_plain) / eps;
}

} // namespace chaoscope
