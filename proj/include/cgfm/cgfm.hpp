#pragma once

// Umbrella header: the full conditional guided flow matching toolkit.

#include "cgfm/common.hpp"
#include "cgfm/rng.hpp"
#include "cgfm/scheduler.hpp"
#include "cgfm/pathkit.hpp"
#include "cgfm/netcore.hpp"
#include "cgfm/sampling.hpp"
#include "cgfm/oracle.hpp"
#include "cgfm/dataio.hpp"
#include "cgfm/evalkit.hpp"
#include "cgfm/training.hpp"
#include "cgfm/verify.hpp"
