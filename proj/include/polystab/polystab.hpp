#pragma once

// Umbrella header pulling in the whole library.

#include "polystab/poly.hpp"
#include "polystab/sdp.hpp"
#include "polystab/sos.hpp"
#include "polystab/model.hpp"
#include "polystab/datadriven.hpp"
#include "polystab/ode.hpp"
#include "polystab/io.hpp"
#include "polystab/benchmarks.hpp"
