#pragma once

// Scalar type of the learned path (layers, quantizer, spectral loss). The
// default build uses float. Building with ACTEL_DOUBLE switches to double and
// moves every symbol into a separate inline namespace, so a double build can
// be linked next to the float one.
#ifdef ACTEL_DOUBLE
#define ACTEL_ABI_NS f64
#else
#define ACTEL_ABI_NS f32
#endif

namespace actel::inline ACTEL_ABI_NS {

#ifdef ACTEL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

}  // namespace actel::inline ACTEL_ABI_NS
