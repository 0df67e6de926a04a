#include "chaoscope/model.hpp"
#include "chaoscope/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace chaoscope {

namespace {

// Weight stream tags; the draw order is part of the reproducibility contract.
constexpr std::uint64_t kTagPosEmb = 1;
constexpr std::uint64_t kTagUnembed = 2;
constexpr std::uint64_t kTagLayerBase = 16;
constexpr std::uint64_t kTagsPerLayer = 8;

std::vector<double> draw_gaussian(std::uint64_t seed, std::uint64_t tag, std::size_t n,
                                  double scale, PrecisionMode mode) {
    SplitMix64 rng(derive_seed(seed, tag));
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = round_into(rng.next_gaussian() * scale, mode);
    }
    return w;
}

std::vector<double> ones(std::size_t n, PrecisionMode mode) {
    return std::vector<double>(n, round_into(1.0, mode));
}

template <class T>
struct WeightSet {
    std::vector<T> pos_emb;    // seq_len x d_model
    std::vector<T> final_gain; // d_model
    std::vector<T> unembed;    // vocab x d_model
    struct Layer {
        std::vector<T> attn_gain; // d_model
        std::vector<T> wq, wk, wv, wo; // d_model x d_model
        std::vector<T> ffn_gain; // d_model
        std::vector<T> w1; // d_ff x d_model
        std::vector<T> w2; // d_model x d_ff
    };
    std::vector<Layer> layers;
};

template <class T>
std::vector<T> narrow(const std::vector<double>& v) {
    std::vector<T> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i]);
    return out;
}

template <class T>
WeightSet<T> narrow_set(const WeightSet<double>& w) {
    WeightSet<T> out;
    out.pos_emb = narrow<T>(w.pos_emb);
    out.final_gain = narrow<T>(w.final_gain);
    out.unembed = narrow<T>(w.unembed);
    out.layers.resize(w.layers.size());
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        out.layers[l].attn_gain = narrow<T>(w.layers[l].attn_gain);
        out.layers[l].wq = narrow<T>(w.layers[l].wq);
        out.layers[l].wk = narrow<T>(w.layers[l].wk);
        out.layers[l].wv = narrow<T>(w.layers[l].wv);
        out.layers[l].wo = narrow<T>(w.layers[l].wo);
        out.layers[l].ffn_gain = narrow<T>(w.layers[l].ffn_gain);
        out.layers[l].w1 = narrow<T>(w.layers[l].w1);
        out.layers[l].w2 = narrow<T>(w.layers[l].w2);
    }
    return out;
}

template <class A>
struct Scratch {
    using S = typename A::S;
    std::vector<S> a, b, reduce_tmp;
};

template <class A>
typename A::S reduce_span(const typename A::S* v, std::size_t n, const ReductionOrder& order,
                          Scratch<A>& sc) {
    return detail::reduce_scalars<A>(v, n, order, sc.reduce_tmp);
}

// y = W x, W row-major rows x cols. Sequential order folds in place; other
// orders materialize the per-row products first.
template <class A>
void matvec(const typename A::S* w, std::size_t rows, std::size_t cols,
            const typename A::S* x, typename A::S* y,
            const ReductionOrder& order, Scratch<A>& sc) {
    using S = typename A::S;
    if (order.kind == ReductionOrder::Kind::Sequential) {
        for (std::size_t r = 0; r < rows; ++r) {
            const S* row = w + r * cols;
            S acc = A::mul(row[0], x[0]);
            for (std::size_t c = 1; c < cols; ++c) {
                acc = A::add(acc, A::mul(row[c], x[c]));
            }
            y[r] = acc;
        }
        return;
    }
    sc.a.resize(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) sc.a[c] = A::mul(row[c], x[c]);
        y[r] = reduce_span<A>(sc.a.data(), cols, order, sc);
    }
}

template <class A>
typename A::S dot_strided(const typename A::S* a, const typename A::S* b, std::size_t n,
                          const ReductionOrder& order, Scratch<A>& sc) {
    using S = typename A::S;
    if (order.kind == ReductionOrder::Kind::Sequential) {
        S acc = A::mul(a[0], b[0]);
        for (std::size_t i = 1; i < n; ++i) acc = A::add(acc, A::mul(a[i], b[i]));
        return acc;
    }
    sc.b.resize(n);
    for (std::size_t i = 0; i < n; ++i) sc.b[i] = A::mul(a[i], b[i]);
    return reduce_span<A>(sc.b.data(), n, order, sc);
}

template <class A>
void rmsnorm(const typename A::S* x, const typename A::S* gain, std::size_t d,
             typename A::S* y, const ReductionOrder& order, Scratch<A>& sc) {
    using S = typename A::S;
    sc.a.resize(d);
    for (std::size_t i = 0; i < d; ++i) sc.a[i] = A::mul(x[i], x[i]);
    const S ms = A::div(reduce_span<A>(sc.a.data(), d, order, sc),
                        A::from_double(static_cast<double>(d)));
    const S r = A::sqrt(A::add(ms, A::from_double(1e-6)));
    for (std::size_t i = 0; i < d; ++i) {
        y[i] = A::mul(A::div(x[i], r), gain[i]);
    }
}

template <class A>
typename A::S silu(typename A::S x) {
    using S = typename A::S;
    const S one = A::from_double(1.0);
    const S sig = A::div(one, A::add(one, A::exp(A::sub(A::from_double(0.0), x))));
    return A::mul(x, sig);
}

template <class A>
struct ForwardResult {
    std::vector<double> m;
    std::vector<double> logits;
    std::vector<std::vector<double>> taps;
};

template <class A>
ForwardResult<A> run_forward(const WeightSet<typename A::S>& w, const ModelConfig& cfg,
                             const EmbeddingPoint& pt, bool want_taps) {
    using S = typename A::S;
    const std::size_t d = cfg.d_model;
    const std::size_t seq = cfg.seq_len;
    const std::size_t heads = cfg.n_heads;
    const std::size_t dh = d / heads;
    const std::size_t p = pt.perturb_position;
    const ReductionOrder& order = cfg.reduction;

    Scratch<A> sc;
    std::vector<S> H(seq * d);
    std::vector<S> normed(seq * d), q(seq * d), k(seq * d), v(seq * d), ctx(seq * d);
    std::vector<S> proj(d), ff_hidden(cfg.d_ff), scores(seq), weights(seq);

    ForwardResult<A> out;
    auto to_doubles = [](const S* x, std::size_t n) {
        std::vector<double> r(n);
        for (std::size_t i = 0; i < n; ++i) r[i] = A::to_double(x[i]);
        return r;
    };

    // Embedding stage: quantize the input into the mode and add the
    // positional table.
    for (std::size_t t = 0; t < seq; ++t) {
        for (std::size_t i = 0; i < d; ++i) {
            H[t * d + i] = A::add(A::from_double(pt.x[t * d + i]), w.pos_emb[t * d + i]);
        }
    }
    if (want_taps) out.taps.push_back(to_doubles(H.data() + p * d, d));

    const S inv_scale = A::div(A::from_double(1.0),
                               A::sqrt(A::from_double(static_cast<double>(dh))));

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto& lw = w.layers[l];

        // attention sublayer
        for (std::size_t t = 0; t < seq; ++t) {
            rmsnorm<A>(H.data() + t * d, lw.attn_gain.data(), d, normed.data() + t * d, order, sc);
        }
        for (std::size_t t = 0; t < seq; ++t) {
            matvec<A>(lw.wq.data(), d, d, normed.data() + t * d, q.data() + t * d, order, sc);
            matvec<A>(lw.wk.data(), d, d, normed.data() + t * d, k.data() + t * d, order, sc);
            matvec<A>(lw.wv.data(), d, d, normed.data() + t * d, v.data() + t * d, order, sc);
        }
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t t = 0; t < seq; ++t) {
                // causal scores, softmax with max subtraction
                for (std::size_t s = 0; s <= t; ++s) {
                    const S raw = dot_strided<A>(q.data() + t * d + off, k.data() + s * d + off,
                                                 dh, order, sc);
                    scores[s] = A::mul(raw, inv_scale);
                }
                S mx = scores[0];
                for (std::size_t s = 1; s <= t; ++s) {
                    if (scores[s] > mx) mx = scores[s];
                }
                for (std::size_t s = 0; s <= t; ++s) {
                    weights[s] = A::exp(A::sub(scores[s], mx));
                }
                const S denom = reduce_span<A>(weights.data(), t + 1, order, sc);
                for (std::size_t s = 0; s <= t; ++s) {
                    weights[s] = A::div(weights[s], denom);
                }
                for (std::size_t i = 0; i < dh; ++i) {
                    sc.a.resize(t + 1);
                    for (std::size_t s = 0; s <= t; ++s) {
                        sc.a[s] = A::mul(weights[s], v[s * d + off + i]);
                    }
                    ctx[t * d + off + i] = reduce_span<A>(sc.a.data(), t + 1, order, sc);
                }
            }
        }
        for (std::size_t t = 0; t < seq; ++t) {
            matvec<A>(lw.wo.data(), d, d, ctx.data() + t * d, proj.data(), order, sc);
            for (std::size_t i = 0; i < d; ++i) {
                H[t * d + i] = A::add(H[t * d + i], proj[i]);
            }
        }

        // feed-forward sublayer
        for (std::size_t t = 0; t < seq; ++t) {
            rmsnorm<A>(H.data() + t * d, lw.ffn_gain.data(), d, normed.data() + t * d, order, sc);
            matvec<A>(lw.w1.data(), cfg.d_ff, d, normed.data() + t * d, ff_hidden.data(), order, sc);
            for (std::size_t i = 0; i < cfg.d_ff; ++i) ff_hidden[i] = silu<A>(ff_hidden[i]);
            matvec<A>(lw.w2.data(), d, cfg.d_ff, ff_hidden.data(), proj.data(), order, sc);
            for (std::size_t i = 0; i < d; ++i) {
                H[t * d + i] = A::add(H[t * d + i], proj[i]);
            }
        }

        if (want_taps) {
            if (l + 1 < cfg.n_layers) {
                out.taps.push_back(to_doubles(H.data() + p * d, d));
            } else {
                // the last tap is the final-normed backbone output
                rmsnorm<A>(H.data() + p * d, w.final_gain.data(), d, proj.data(), order, sc);
                out.taps.push_back(to_doubles(proj.data(), d));
            }
        }
    }

    // final norm at the last position, then unembedding
    std::vector<S> m(d);
    rmsnorm<A>(H.data() + (seq - 1) * d, w.final_gain.data(), d, m.data(), order, sc);
    std::vector<S> logits(cfg.vocab_size);
    matvec<A>(w.unembed.data(), cfg.vocab_size, d, m.data(), logits.data(), order, sc);

    out.m = to_doubles(m.data(), d);
    out.logits = to_doubles(logits.data(), cfg.vocab_size);
    return out;
}

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

} // namespace

void ModelConfig::validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || seq_len == 0) {
        throw std::invalid_argument("model config: all shape fields must be positive");
    }
    if (vocab_size < 2) {
        throw std::invalid_argument("model config: vocab_size must be at least 2");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    }
}

std::vector<double> make_probe_vector(std::size_t dim, std::uint64_t seed,
                                      double scale, double magnitude_decades,
                                      PointProfile profile) {
    SplitMix64 rng(derive_seed(seed, 0xE0B));
    std::vector<double> x(dim);
    if (profile == PointProfile::Binade) {
        // snap to a power of two so [anchor, 1.9*anchor) stays in one binade
        const double anchor = std::ldexp(1.0, std::ilogb(scale));
        for (std::size_t i = 0; i < dim; ++i) {
            const double mag = anchor * (1.0 + 0.9 * rng.next_double());
            x[i] = rng.next_u64() & 1u ? mag : -mag;
        }
        return x;
    }
    for (std::size_t i = 0; i < dim; ++i) {
        const double g = rng.next_gaussian();
        const double decade = rng.next_uniform(0.0, magnitude_decades);
        x[i] = scale * g * std::pow(10.0, -decade);
    }
    return x;
}

EmbeddingPoint make_embedding_point(const ModelConfig& cfg, std::uint64_t seed,
                                    double scale, double magnitude_decades,
                                    PointProfile profile) {
    EmbeddingPoint pt;
    pt.x = make_probe_vector(cfg.seq_len * cfg.d_model, seed, scale, magnitude_decades, profile);
    pt.perturb_position = cfg.seq_len - 1;
    return pt;
}

std::vector<double> random_unit_direction(std::size_t dim, std::uint64_t seed) {
    SplitMix64 rng(derive_seed(seed, 0xD14));
    std::vector<double> v(dim);
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        v[i] = rng.next_gaussian();
        norm_sq += v[i] * v[i];
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& c : v) c *= inv;
    return v;
}

double logit_margin(std::span<const double> logits) {
    if (logits.size() < 2) return 0.0;
    double top = -std::numeric_limits<double>::infinity();
    double second = top;
    for (double x : logits) {
        if (x > top) {
            second = top;
            top = x;
        } else if (x > second) {
            second = x;
        }
    }
    return top - second;
}

int argmax_lowest(std::span<const double> logits) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return best;
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// --- ToyModel --------------------------------------------------------------

struct ToyModel::Impl {
    WeightSet<double> wd;
    WeightSet<float> wf; // valid iff precision != Fp64
};

ToyModel::ToyModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    const std::size_t d = config_.d_model;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const PrecisionMode mode = config_.precision;
    const std::uint64_t seed = config_.seed;

    auto impl = std::make_shared<Impl>();
    WeightSet<double>& w = impl->wd;
    w.pos_emb = draw_gaussian(seed, kTagPosEmb, config_.seq_len * d, scale, mode);
    w.final_gain = ones(d, mode);
    w.unembed = draw_gaussian(seed, kTagUnembed, config_.vocab_size * d, scale, mode);
    w.layers.resize(config_.n_layers);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::uint64_t base = kTagLayerBase + l * kTagsPerLayer;
        auto& lw = w.layers[l];
        lw.attn_gain = ones(d, mode);
        lw.wq = draw_gaussian(seed, base + 0, d * d, scale, mode);
        lw.wk = draw_gaussian(seed, base + 1, d * d, scale, mode);
        lw.wv = draw_gaussian(seed, base + 2, d * d, scale, mode);
        lw.wo = draw_gaussian(seed, base + 3, d * d, scale, mode);
        lw.ffn_gain = ones(d, mode);
        lw.w1 = draw_gaussian(seed, base + 4, config_.d_ff * d, scale, mode);
        lw.w2 = draw_gaussian(seed, base + 5, d * config_.d_ff, scale, mode);
    }
    if (mode != PrecisionMode::Fp64) {
        impl->wf = narrow_set<float>(w);
    }
    impl_ = std::move(impl);
}

namespace {

void check_point(const ModelConfig& cfg, const EmbeddingPoint& pt) {
    if (pt.x.size() != cfg.seq_len * cfg.d_model) {
        throw std::invalid_argument("embedding point length does not match config");
    }
    if (pt.perturb_position >= cfg.seq_len) {
        throw std::invalid_argument("perturb_position out of range");
    }
}

} // namespace

LstOutput ToyModel::forward(const EmbeddingPoint& point) const {
    check_point(config_, point);
    LstOutput out;
    switch (config_.precision) {
        case PrecisionMode::Fp32: {
            auto r = run_forward<detail::Fp32Arith>(impl_->wf, config_, point, false);
            out.m = std::move(r.m);
            out.logits = std::move(r.logits);
            break;
        }
        case PrecisionMode::Bf16Emulated: {
            auto r = run_forward<detail::Bf16Arith>(impl_->wf, config_, point, false);
            out.m = std::move(r.m);
            out.logits = std::move(r.logits);
            break;
        }
        case PrecisionMode::Fp64:
        default: {
            auto r = run_forward<detail::Fp64Arith>(impl_->wd, config_, point, false);
            out.m = std::move(r.m);
            out.logits = std::move(r.logits);
            break;
        }
    }
    out.finite = all_finite(out.m) && all_finite(out.logits);
    out.margin = out.finite ? logit_margin(out.logits) : std::numeric_limits<double>::quiet_NaN();
    out.argmax_token = argmax_lowest(out.logits);
    return out;
}

std::vector<std::vector<double>> ToyModel::layer_taps(const EmbeddingPoint& point) const {
    check_point(config_, point);
    switch (config_.precision) {
        case PrecisionMode::Fp32:
            return run_forward<detail::Fp32Arith>(impl_->wf, config_, point, true).taps;
        case PrecisionMode::Bf16Emulated:
            return run_forward<detail::Bf16Arith>(impl_->wf, config_, point, true).taps;
        case PrecisionMode::Fp64:
        default:
            return run_forward<detail::Fp64Arith>(impl_->wd, config_, point, true).taps;
    }
}

std::vector<double> ToyModel::flat_weights() const {
    const WeightSet<double>& w = impl_->wd;
    std::vector<double> flat;
    auto append = [&flat](const std::vector<double>& v) {
        flat.insert(flat.end(), v.begin(), v.end());
    };
    append(w.pos_emb);
    for (const auto& lw : w.layers) {
        append(lw.attn_gain);
        append(lw.wq);
        append(lw.wk);
        append(lw.wv);
        append(lw.wo);
        append(lw.ffn_gain);
        append(lw.w1);
        append(lw.w2);
    }
    append(w.final_gain);
    append(w.unembed);
    return flat;
}

void ToyModel::export_weights(const std::filesystem::path& path) const {
    static_assert(std::endian::native == std::endian::little,
                  "weight dump format is little-endian");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open weight file for writing: " + path.string());
    }
    const char magic[4] = {'C', 'W', 'B', '1'};
    out.write(magic, 4);
    const std::uint64_t header[7] = {config_.d_model, config_.n_layers, config_.n_heads,
                                     config_.d_ff,    config_.vocab_size, config_.seq_len,
                                     config_.seed};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    const std::uint8_t prec = static_cast<std::uint8_t>(config_.precision);
    out.write(reinterpret_cast<const char*>(&prec), 1);
    const std::vector<double> flat = flat_weights();
    const std::uint64_t count = flat.size();
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!out) {
        throw std::runtime_error("short write on weight file: " + path.string());
    }
}

std::span<const double> ToyModel::unembedding_row(std::size_t token) const {
    const auto& u = impl_->wd.unembed;
    return {u.data() + token * config_.d_model, config_.d_model};
}

// --- LinearOracle -----------------------------------------------------------

namespace {

// Modified Gram-Schmidt with a second orthogonalization pass, fully
// deterministic in Fp64. Columns of the result are orthonormal.
std::vector<double> orthonormal_columns(std::size_t d, std::uint64_t seed, std::uint64_t tag) {
    SplitMix64 rng(derive_seed(seed, tag));
    std::vector<double> g(d * d);
    for (double& x : g) x = rng.next_gaussian();
    std::vector<double> q(d * d);
    for (std::size_t k = 0; k < d; ++k) {
        double* col = q.data() + k * d;
        for (std::size_t i = 0; i < d; ++i) col[i] = g[k * d + i];
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t j = 0; j < k; ++j) {
                const double* prev = q.data() + j * d;
                double c = 0.0;
                for (std::size_t i = 0; i < d; ++i) c += col[i] * prev[i];
                for (std::size_t i = 0; i < d; ++i) col[i] -= c * prev[i];
            }
        }
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) norm_sq += col[i] * col[i];
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (std::size_t i = 0; i < d; ++i) col[i] *= inv;
    }
    return q;
}

} // namespace

LinearOracle::LinearOracle(std::vector<double> sigma, std::uint64_t seed, std::size_t vocab_size)
    : dim_(sigma.size()), vocab_(vocab_size), sigma_(std::move(sigma)) {
    if (dim_ == 0) throw std::invalid_argument("oracle needs at least one singular value");
    for (std::size_t k = 1; k < dim_; ++k) {
        if (sigma_[k] > sigma_[k - 1]) {
            throw std::invalid_argument("oracle sigma spectrum must be non-increasing");
        }
    }
    u_cols_ = orthonormal_columns(dim_, seed, 101);
    v_cols_ = orthonormal_columns(dim_, seed, 102);
    u_rows_.resize(dim_ * dim_);
    for (std::size_t k = 0; k < dim_; ++k) {
        for (std::size_t i = 0; i < dim_; ++i) {
            u_rows_[i * dim_ + k] = u_cols_[k * dim_ + i];
        }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
    unembed_ = draw_gaussian(seed, 103, vocab_ * dim_, scale, PrecisionMode::Fp64);
}

LinearOracle LinearOracle::diagonal(std::vector<double> sigma, std::uint64_t seed,
                                    std::size_t vocab_size) {
    LinearOracle oracle(std::move(sigma), seed, vocab_size);
    std::fill(oracle.u_cols_.begin(), oracle.u_cols_.end(), 0.0);
    std::fill(oracle.v_cols_.begin(), oracle.v_cols_.end(), 0.0);
    std::fill(oracle.u_rows_.begin(), oracle.u_rows_.end(), 0.0);
    for (std::size_t k = 0; k < oracle.dim_; ++k) {
        oracle.u_cols_[k * oracle.dim_ + k] = 1.0;
        oracle.v_cols_[k * oracle.dim_ + k] = 1.0;
        oracle.u_rows_[k * oracle.dim_ + k] = 1.0;
    }
    return oracle;
}

LinearOracle LinearOracle::log_spaced(std::size_t dim, double sigma_min, double sigma_max,
                                      std::uint64_t seed, std::size_t vocab_size) {
    if (dim == 0 || sigma_min <= 0.0 || sigma_max < sigma_min) {
        throw std::invalid_argument("bad log-spaced spectrum parameters");
    }
    std::vector<double> sigma(dim);
    const double lo = std::log10(sigma_min);
    const double hi = std::log10(sigma_max);
    for (std::size_t k = 0; k < dim; ++k) {
        const double t = dim == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(dim - 1);
        sigma[k] = std::pow(10.0, hi - t * (hi - lo));
    }
    return LinearOracle(std::move(sigma), seed, vocab_size);
}

std::span<const double> LinearOracle::right_singular(std::size_t k) const {
    return {v_cols_.data() + k * dim_, dim_};
}

std::span<const double> LinearOracle::left_singular(std::size_t k) const {
    return {u_cols_.data() + k * dim_, dim_};
}

std::span<const double> LinearOracle::unembedding_row(std::size_t token) const {
    return {unembed_.data() + token * dim_, dim_};
}

std::vector<double> LinearOracle::forward(std::span<const double> x, PrecisionMode mode,
                                          const ReductionOrder& order) const {
    if (x.size() != dim_) throw std::invalid_argument("oracle forward: length mismatch");
    std::vector<double> t(dim_);
    for (std::size_t k = 0; k < dim_; ++k) {
        t[k] = dot(right_singular(k), x, order, mode);
        t[k] = round_into(round_into(sigma_[k], mode) * t[k], mode);
    }
    std::vector<double> y(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
        y[i] = dot(std::span<const double>(u_rows_.data() + i * dim_, dim_), t, order, mode);
    }
    return y;
}

std::vector<double> LinearOracle::preimage(std::span<const double> y) const {
    if (y.size() != dim_) throw std::invalid_argument("oracle preimage: length mismatch");
    std::vector<double> t(dim_);
    for (std::size_t k = 0; k < dim_; ++k) {
        const double* u = u_cols_.data() + k * dim_;
        double c = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) c += u[i] * y[i];
        t[k] = c / sigma_[k];
    }
    std::vector<double> x(dim_, 0.0);
    for (std::size_t k = 0; k < dim_; ++k) {
        const double* v = v_cols_.data() + k * dim_;
        for (std::size_t i = 0; i < dim_; ++i) x[i] += v[i] * t[k];
    }
    return x;
}

std::vector<double> LinearOracle::materialize() const {
    std::vector<double> a(dim_ * dim_, 0.0);
    for (std::size_t k = 0; k < dim_; ++k) {
        const double* u = u_cols_.data() + k * dim_;
        const double* v = v_cols_.data() + k * dim_;
        for (std::size_t i = 0; i < dim_; ++i) {
            const double su = sigma_[k] * u[i];
            for (std::size_t j = 0; j < dim_; ++j) {
                a[i * dim_ + j] += su * v[j];
            }
        }
    }
    return a;
}

// --- subjects ----------------------------------------------------------------

ModelSubject::ModelSubject(const ToyModel& model, EmbeddingPoint base_point)
    : model_(&model), base_(std::move(base_point)) {
    check_point(model.config(), base_);
}

std::size_t ModelSubject::dim() const { return model_->config().d_model; }

PrecisionMode ModelSubject::precision() const { return model_->config().precision; }

EmbeddingPoint ModelSubject::with_slice(std::span<const double> probe_x) const {
    if (probe_x.size() != dim()) {
        throw std::invalid_argument("probe point has wrong dimension");
    }
    EmbeddingPoint pt = base_;
    std::copy(probe_x.begin(), probe_x.end(),
              pt.x.begin() + static_cast<std::ptrdiff_t>(pt.perturb_position * dim()));
    return pt;
}

LstOutput ModelSubject::eval(std::span<const double> probe_x) const {
    return model_->forward(with_slice(probe_x));
}

std::vector<std::vector<double>> ModelSubject::taps(std::span<const double> probe_x) const {
    return model_->layer_taps(with_slice(probe_x));
}

std::vector<double> ModelSubject::base() const {
    const std::size_t d = dim();
    const double* p = base_.x.data() + base_.perturb_position * d;
    return {p, p + d};
}

OracleSubject::OracleSubject(const LinearOracle& oracle, std::vector<double> base,
                             PrecisionMode mode, ReductionOrder order)
    : oracle_(&oracle), base_(std::move(base)), mode_(mode), storage_(mode), order_(order) {
    if (base_.size() != oracle.dim()) {
        throw std::invalid_argument("oracle base point has wrong dimension");
    }
}

std::size_t OracleSubject::dim() const { return oracle_->dim(); }

LstOutput OracleSubject::eval(std::span<const double> probe_x) const {
    LstOutput out;
    out.m = oracle_->forward(probe_x, mode_, order_);
    if (storage_ != mode_) {
        for (double& v : out.m) v = round_into(v, storage_);
    }
    out.logits.resize(oracle_->vocab_size());
    for (std::size_t tok = 0; tok < oracle_->vocab_size(); ++tok) {
        out.logits[tok] = dot(oracle_->unembedding_row(tok), out.m, order_, mode_);
    }
    out.finite = all_finite(out.m) && all_finite(out.logits);
    out.margin = out.finite ? logit_margin(out.logits) : std::numeric_limits<double>::quiet_NaN();
    out.argmax_token = argmax_lowest(out.logits);
    return out;
}

std::vector<std::vector<double>> OracleSubject::taps(std::span<const double> probe_x) const {
    std::vector<double> in(probe_x.size());
    for (std::size_t i = 0; i < probe_x.size(); ++i) in[i] = round_into(probe_x[i], mode_);
    return {std::move(in), oracle_->forward(probe_x, mode_, order_)};
}

IdentitySubject::IdentitySubject(std::vector<double> base, PrecisionMode mode)
    : base_(std::move(base)), mode_(mode) {}

LstOutput IdentitySubject::eval(std::span<const double> probe_x) const {
    LstOutput out;
    out.m.resize(probe_x.size());
    for (std::size_t i = 0; i < probe_x.size(); ++i) out.m[i] = round_into(probe_x[i], mode_);
    out.finite = all_finite(out.m);
    out.margin = 0.0;
    out.argmax_token = 0;
    return out;
}

std::vector<std::vector<double>> IdentitySubject::taps(std::span<const double> probe_x) const {
    return {eval(probe_x).m};
}

} // namespace chaoscope
