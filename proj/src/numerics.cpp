#include "chaoscope/numerics.hpp"
#include "chaoscope/rng.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace chaoscope {

std::string_view to_string(PrecisionMode mode) {
    switch (mode) {
        case PrecisionMode::Bf16Emulated: return "bf16";
        case PrecisionMode::Fp32: return "fp32";
        case PrecisionMode::Fp64: return "fp64";
    }
    return "fp64";
}

PrecisionMode precision_from_string(std::string_view text) {
    if (text == "bf16") return PrecisionMode::Bf16Emulated;
    if (text == "fp32") return PrecisionMode::Fp32;
    if (text == "fp64") return PrecisionMode::Fp64;
    throw std::invalid_argument("unknown precision mode '" + std::string(text) +
                                "' (expected bf16|fp32|fp64)");
}

std::string to_string(const ReductionOrder& order) {
    switch (order.kind) {
        case ReductionOrder::Kind::Sequential: return "sequential";
        case ReductionOrder::Kind::Pairwise: return "pairwise";
        case ReductionOrder::Kind::Permuted: return "permuted:" + std::to_string(order.seed);
    }
    return "sequential";
}

ReductionOrder reduction_from_string(std::string_view text) {
    if (text == "sequential") return ReductionOrder::sequential();
    if (text == "pairwise") return ReductionOrder::pairwise();
    constexpr std::string_view prefix = "permuted:";
    if (text.substr(0, prefix.size()) == prefix) {
        std::uint64_t seed = 0;
        const std::string digits(text.substr(prefix.size()));
        std::size_t pos = 0;
        seed = std::stoull(digits, &pos);
        if (pos != digits.size()) {
            throw std::invalid_argument("bad permuted seed '" + digits + "'");
        }
        return ReductionOrder::permuted(seed);
    }
    throw std::invalid_argument("unknown reduction order '" + std::string(text) +
                                "' (expected sequential|pairwise|permuted:<seed>)");
}

// --- rng ---------------------------------------------------------------------

std::uint64_t SplitMix64::next_below(std::uint64_t n) {
    // Rejection sampling on the top of the range keeps the draw unbiased and
    // platform-independent.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double SplitMix64::next_gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1, u2;
    do {
        u1 = next_double();
    } while (u1 <= 0.0);
    u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    SplitMix64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    SplitMix64 rng(base ^ (0x9E3779B97F4A7C15ULL * (tag + 1)));
    return rng.next_u64();
}

// --- lattice navigation --------------------------------------------------

namespace {

// Step in the BF16 lattice via the sign-magnitude integer order of the
// 16-bit encoding. x must be BF16-representable and finite.
float bf16_step(float x, bool up) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(x);
    const std::uint16_t b = static_cast<std::uint16_t>(u >> 16);
    const std::int32_t mag = static_cast<std::int32_t>(b & 0x7FFF);
    const std::int32_t ord = (b & 0x8000) ? -mag : mag;
    const std::int32_t next = ord + (up ? 1 : -1);
    const std::uint16_t nb = next >= 0
        ? static_cast<std::uint16_t>(next)
        : static_cast<std::uint16_t>(0x8000 | static_cast<std::uint16_t>(-next));
    return std::bit_cast<float>(static_cast<std::uint32_t>(nb) << 16);
}

} // namespace

double nextafter(double x, StepDirection dir, PrecisionMode mode) {
    if (!std::isfinite(x)) {
        throw std::invalid_argument("nextafter requires a finite value");
    }
    const bool up = dir == StepDirection::TowardPosInf;
    const double inf = std::numeric_limits<double>::infinity();
    switch (mode) {
        case PrecisionMode::Fp64:
            return std::nextafter(x, up ? inf : -inf);
        case PrecisionMode::Fp32: {
            const float xf = static_cast<float>(x);
            return static_cast<double>(
                std::nextafterf(xf, up ? std::numeric_limits<float>::infinity()
                                       : -std::numeric_limits<float>::infinity()));
        }
        case PrecisionMode::Bf16Emulated:
        default:
            return static_cast<double>(bf16_step(round_to_bf16(static_cast<float>(x)), up));
    }
}

double ulp_spacing(double x, PrecisionMode mode) {
    if (!std::isfinite(x)) {
        throw std::invalid_argument("ulp_spacing requires a finite value");
    }
    const double ax = std::fabs(round_into(x, mode));
    return nextafter(ax, StepDirection::TowardPosInf, mode) - ax;
}

// --- reductions ----------------------------------------------------------

namespace detail {

namespace {

template <class A>
typename A::S pairwise_sum(const typename A::S* v, std::size_t n) {
    if (n == 1) return v[0];
    if (n == 2) return A::add(v[0], v[1]);
    const std::size_t half = n / 2;
    return A::add(pairwise_sum<A>(v, half), pairwise_sum<A>(v + half, n - half));
}

} // namespace

template <class A>
typename A::S reduce_scalars(const typename A::S* v, std::size_t n,
                             const ReductionOrder& order,
                             std::vector<typename A::S>& scratch) {
    using S = typename A::S;
    switch (order.kind) {
        case ReductionOrder::Kind::Sequential: {
            S acc = v[0];
            for (std::size_t i = 1; i < n; ++i) acc = A::add(acc, v[i]);
            return acc;
        }
        case ReductionOrder::Kind::Pairwise:
            return pairwise_sum<A>(v, n);
        case ReductionOrder::Kind::Permuted:
        default: {
            const auto perm = seeded_permutation(n, order.seed);
            scratch.resize(n);
            for (std::size_t i = 0; i < n; ++i) scratch[i] = v[perm[i]];
            S acc = scratch[0];
            for (std::size_t i = 1; i < n; ++i) acc = A::add(acc, scratch[i]);
            return acc;
        }
    }
}

template Fp32Arith::S reduce_scalars<Fp32Arith>(const float*, std::size_t,
                                                const ReductionOrder&, std::vector<float>&);
template Fp64Arith::S reduce_scalars<Fp64Arith>(const double*, std::size_t,
                                                const ReductionOrder&, std::vector<double>&);
template Bf16Arith::S reduce_scalars<Bf16Arith>(const float*, std::size_t,
                                                const ReductionOrder&, std::vector<float>&);

} // namespace detail

namespace {

template <class A>
double reduce_impl(std::span<const double> values, const ReductionOrder& order) {
    using S = typename A::S;
    std::vector<S> buf(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) buf[i] = A::from_double(values[i]);
    std::vector<S> scratch;
    return A::to_double(detail::reduce_scalars<A>(buf.data(), buf.size(), order, scratch));
}

template <class A>
double dot_impl(std::span<const double> a, std::span<const double> b,
                const ReductionOrder& order) {
    using S = typename A::S;
    std::vector<S> prods(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        prods[i] = A::mul(A::from_double(a[i]), A::from_double(b[i]));
    }
    std::vector<S> scratch;
    return A::to_double(detail::reduce_scalars<A>(prods.data(), prods.size(), order, scratch));
}

} // namespace

double reduce(std::span<const double> values, const ReductionOrder& order, PrecisionMode mode) {
    if (values.empty()) {
        throw std::invalid_argument("reduce: empty input");
    }
    switch (mode) {
        case PrecisionMode::Fp32: return reduce_impl<detail::Fp32Arith>(values, order);
        case PrecisionMode::Fp64: return reduce_impl<detail::Fp64Arith>(values, order);
        case PrecisionMode::Bf16Emulated:
        default: return reduce_impl<detail::Bf16Arith>(values, order);
    }
}

double dot(std::span<const double> a, std::span<const double> b,
           const ReductionOrder& order, PrecisionMode mode) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("dot: length mismatch");
    }
    if (a.empty()) {
        throw std::invalid_argument("dot: empty input");
    }
    switch (mode) {
        case PrecisionMode::Fp32: return dot_impl<detail::Fp32Arith>(a, b, order);
        case PrecisionMode::Fp64: return dot_impl<detail::Fp64Arith>(a, b, order);
        case PrecisionMode::Bf16Emulated:
        default: return dot_impl<detail::Bf16Arith>(a, b, order);
    }
}

} // namespace chaoscope
