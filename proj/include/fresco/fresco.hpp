#pragma once

#include "fresco/blending.hpp"
#include "fresco/config.hpp"
#include "fresco/denoiser.hpp"
#include "fresco/error.hpp"
#include "fresco/external.hpp"
#include "fresco/fusion.hpp"
#include "fresco/metrics.hpp"
#include "fresco/netpbm.hpp"
#include "fresco/pipeline.hpp"
#include "fresco/prior_strength.hpp"
#include "fresco/protocol.hpp"
#include "fresco/rng.hpp"
#include "fresco/sampler.hpp"
#include "fresco/schedules.hpp"
#include "fresco/tensor.hpp"
#include "fresco/tile_planner.hpp"
