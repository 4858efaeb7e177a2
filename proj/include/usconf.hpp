#pragma once
// Umbrella header. cli.hpp is not included; it pulls in CLI11 and json.

#include "usconf/confidence.hpp"
#include "usconf/error.hpp"
#include "usconf/grid.hpp"
#include "usconf/io.hpp"
#include "usconf/loss.hpp"
#include "usconf/mc_oracle.hpp"
#include "usconf/metrics.hpp"
#include "usconf/parallel.hpp"
#include "usconf/random.hpp"
#include "usconf/sparse.hpp"
#include "usconf/stats.hpp"
#include "usconf/toy.hpp"
