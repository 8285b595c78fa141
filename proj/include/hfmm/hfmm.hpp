#pragma once

/// @file
/// Umbrella header for the whole library.

#include "hfmm/boundary.hpp"
#include "hfmm/errorlab.hpp"
#include "hfmm/errors.hpp"
#include "hfmm/fmm.hpp"
#include "hfmm/geometry.hpp"
#include "hfmm/grafbounds.hpp"
#include "hfmm/quadtree.hpp"
#include "hfmm/specfun.hpp"

namespace hfmm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace hfmm
