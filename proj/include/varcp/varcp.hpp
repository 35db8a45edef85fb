#pragma once

// Umbrella header: streaming change point detection for high-dimensional
// vector autoregressive series.

#include "varcp/errors.hpp"
#include "varcp/estimation.hpp"
#include "varcp/gaussian.hpp"
#include "varcp/io.hpp"
#include "varcp/model.hpp"
#include "varcp/monitor.hpp"
#include "varcp/pipeline.hpp"
#include "varcp/rng.hpp"
