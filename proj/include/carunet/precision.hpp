#pragma once

// The numeric library is compiled once per element type. Every
// precision-dependent symbol lives in an inline namespace (f32 or f64) so
// both builds can be linked into one binary without clashing.

#ifdef CARUNET_USE_DOUBLE
#define CARUNET_PRECISION_NS f64
#else
#define CARUNET_PRECISION_NS f32
#endif

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

#ifdef CARUNET_USE_DOUBLE
using Real = double;
#else
using Real = float;
#endif

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
