// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scalar type of the differentiable core. Production builds use 32-bit reals;
// the finite-difference test oracle links a 64-bit instantiation built with
// LAYERPARTI_DOUBLE_PRECISION. Each instantiation lives in its own inline
// namespace so both can be linked into one binary.
#ifdef LAYERPARTI_DOUBLE_PRECISION
#define LAYERPARTI_PRECISION f64
#define LAYERPARTI_REAL_TYPE double
#else
#define LAYERPARTI_PRECISION f32
#define LAYERPARTI_REAL_TYPE float
#endif

#define LAYERPARTI_BEGIN_NAMESPACE \
    namespace layerparti {         \
    inline namespace LAYERPARTI_PRECISION {
#define LAYERPARTI_END_NAMESPACE \
    }                            \
    }

LAYERPARTI_BEGIN_NAMESPACE
using Real = LAYERPARTI_REAL_TYPE;
LAYERPARTI_END_NAMESPACE
