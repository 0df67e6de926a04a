#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace chaoscope {

// Which floating-point lattice every arithmetic op rounds into.
enum class PrecisionMode { Bf16Emulated, Fp32, Fp64 };

std::string_view to_string(PrecisionMode mode);
PrecisionMode precision_from_string(std::string_view text);

// Summation order. Sequential and Pairwise are fully deterministic;
// Permuted(seed) models a nondeterministic parallel reduction but is itself
// reproducible given the seed.
struct ReductionOrder {
    enum class Kind { Sequential, Pairwise, Permuted };
    Kind kind = Kind::Sequential;
    std::uint64_t seed = 0;

    static ReductionOrder sequential() { return {Kind::Sequential, 0}; }
    static ReductionOrder pairwise() { return {Kind::Pairwise, 0}; }
    static ReductionOrder permuted(std::uint64_t seed) { return {Kind::Permuted, seed}; }

    bool operator==(const ReductionOrder&) const = default;
};

std::string to_string(const ReductionOrder& order);
ReductionOrder reduction_from_string(std::string_view text);

enum class StepDirection { TowardPosInf, TowardNegInf };

// --- BF16 emulation ---------------------------------------------------------
// BF16 values are carried as FP32 values whose low 16 mantissa bits are zero.

// Round an FP32 value to the nearest BF16-representable value, ties to even.
// NaN maps to a quiet NaN, infinities are preserved, values beyond the BF16
// max finite round to +/-inf per IEEE overflow rules.
inline float round_to_bf16(float x) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(x);
    if ((~u & 0x7F800000u) == 0) {       // inf or NaN
        if ((u & 0x007FFFFFu) != 0) {
            u |= 0x00400000u;            // quiet the NaN, keep it a NaN after truncation
        }
        return std::bit_cast<float>(u & 0xFFFF0000u);
    }
    u += 0x7FFFu + ((u >> 16) & 1u);     // round to nearest, ties to even
    return std::bit_cast<float>(u & 0xFFFF0000u);
}

inline bool is_bf16_value(float x) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(x);
    return (u & 0xFFFFu) == 0;
}

// Round a value into the mode's lattice. Fp64 is the identity.
inline double round_into(double x, PrecisionMode mode) {
    switch (mode) {
        case PrecisionMode::Fp64: return x;
        case PrecisionMode::Fp32: return static_cast<double>(static_cast<float>(x));
        case PrecisionMode::Bf16Emulated:
        default: return static_cast<double>(round_to_bf16(static_cast<float>(x)));
    }
}

// Adjacent representable value in the mode's lattice. Stepping up from the
// mode's max finite value yields +inf (the infinity is the flag). x must be
// a lattice value of the mode; callers round in first if unsure.
double nextafter(double x, StepDirection dir, PrecisionMode mode);

// nextafter(|x|, up) - |x|; strictly positive for finite x.
double ulp_spacing(double x, PrecisionMode mode);

// Sum accumulated in the given order, every partial sum rounded into the
// mode's lattice. Inputs are rounded into the lattice on entry. Bitwise
// reproducible given identical (values, order, mode). Throws
// std::invalid_argument on empty input.
double reduce(std::span<const double> values, const ReductionOrder& order, PrecisionMode mode);

// Element products rounded into the mode, then reduced. Throws on length
// mismatch.
double dot(std::span<const double> a, std::span<const double> b,
           const ReductionOrder& order, PrecisionMode mode);

// --- scalar arithmetic policies ---------------------------------------------
// One rounding into the mode's lattice after every op. These are the inner
// loops of the whole artifact; everything above and the model engine dispatch
// onto them.
namespace detail {

struct Fp64Arith {
    using S = double;
    static constexpr PrecisionMode mode = PrecisionMode::Fp64;
    static S from_double(double x) { return x; }
    static double to_double(S x) { return x; }
    static S add(S a, S b) { return a + b; }
    static S sub(S a, S b) { return a - b; }
    static S mul(S a, S b) { return a * b; }
    static S div(S a, S b) { return a / b; }
    static S sqrt(S a) { return std::sqrt(a); }
    static S exp(S a) { return std::exp(a); }
};

struct Fp32Arith {
    using S = float;
    static constexpr PrecisionMode mode = PrecisionMode::Fp32;
    static S from_double(double x) { return static_cast<float>(x); }
    static double to_double(S x) { return static_cast<double>(x); }
    static S add(S a, S b) { return a + b; }
    static S sub(S a, S b) { return a - b; }
    static S mul(S a, S b) { return a * b; }
    static S div(S a, S b) { return a / b; }
    static S sqrt(S a) { return std::sqrt(a); }
    static S exp(S a) { return std::exp(a); }
};

struct Bf16Arith {
    using S = float; // BF16 value carried in an FP32 with zero low mantissa bits
    static constexpr PrecisionMode mode = PrecisionMode::Bf16Emulated;
    static S from_double(double x) { return round_to_bf16(static_cast<float>(x)); }
    static double to_double(S x) { return static_cast<double>(x); }
    static S add(S a, S b) { return round_to_bf16(a + b); }
    static S sub(S a, S b) { return round_to_bf16(a - b); }
    static S mul(S a, S b) { return round_to_bf16(a * b); }
    static S div(S a, S b) { return round_to_bf16(a / b); }
    static S sqrt(S a) { return round_to_bf16(std::sqrt(a)); }
    static S exp(S a) { return round_to_bf16(std::exp(a)); }
};

// Reduce a span of lattice scalars in the given order. Scratch space for the
// non-sequential orders is caller-provided so hot loops do not allocate.
template <class A>
typename A::S reduce_scalars(const typename A::S* v, std::size_t n,
                             const ReductionOrder& order,
                             std::vector<typename A::S>& scratch);

} // namespace detail

} // namespace chaoscope
