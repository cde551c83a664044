#pragma once

// Umbrella header for the hierarchical feature regression library.

#include "hfr/baselines.hpp"
#include "hfr/clustering.hpp"
#include "hfr/estimator.hpp"
#include "hfr/hierarchy.hpp"
#include "hfr/io.hpp"
#include "hfr/kernels.hpp"
#include "hfr/model_selection.hpp"
#include "hfr/qp.hpp"
#include "hfr/render.hpp"
#include "hfr/rng.hpp"
#include "hfr/simulation.hpp"
#include "hfr/types.hpp"
