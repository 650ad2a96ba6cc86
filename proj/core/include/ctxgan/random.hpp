#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ctxgan {

using Rng = std::mt19937_64;

/// Engine seeded from a base seed plus stream identifiers, so that e.g. the
/// i-th corpus sample or the s-th training step can be regenerated without
/// replaying everything before it.
Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> streams = {});

/// Uniform draw in [lo, hi].
double uniform(Rng& rng, double lo, double hi);

}  // namespace ctxgan
