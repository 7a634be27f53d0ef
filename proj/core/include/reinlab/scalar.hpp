#pragma once

// The library is compiled once per element precision. The float build is the
// production path; the double build exists for finite-difference gradient
// verification. Each build lives in its own inline namespace so both can be
// linked into one executable.

#if defined(REINLAB_DOUBLE_PRECISION)
#define REINLAB_PRECISION_NS f64
#else
#define REINLAB_PRECISION_NS f32
#endif

#define REINLAB_NAMESPACE_BEGIN \
  namespace reinlab {           \
  inline namespace REINLAB_PRECISION_NS {
#define REINLAB_NAMESPACE_END \
  }                           \
  }

REINLAB_NAMESPACE_BEGIN

#if defined(REINLAB_DOUBLE_PRECISION)
using Scalar = double;
#else
using Scalar = float;
#endif

REINLAB_NAMESPACE_END
