#pragma once

#include "splatalign/coarse.hpp"
#include "splatalign/confvol.hpp"
#include "splatalign/error.hpp"
#include "splatalign/evaluate.hpp"
#include "splatalign/gaussian.hpp"
#include "splatalign/geom.hpp"
#include "splatalign/image.hpp"
#include "splatalign/io.hpp"
#include "splatalign/photometric.hpp"
#include "splatalign/pipeline.hpp"
#include "splatalign/raster.hpp"
#include "splatalign/refine.hpp"
#include "splatalign/scene.hpp"
#include "splatalign/sync.hpp"
#include "splatalign/synth.hpp"

namespace splatalign {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace splatalign
