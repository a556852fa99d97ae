// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace memeblip {

/// Build-wide training precision. Gradient checks instantiate the templates
/// with double directly.
#ifdef MEMEBLIP_USE_DOUBLE
using Real = double;
#else
using Real = float;
#endif

}  // namespace memeblip
