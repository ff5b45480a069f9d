#ifndef CALIMPUTE_HPP
#define CALIMPUTE_HPP

#include "calimpute/adjust.hpp"
#include "calimpute/data.hpp"
#include "calimpute/edits.hpp"
#include "calimpute/error.hpp"
#include "calimpute/fm.hpp"
#include "calimpute/io.hpp"
#include "calimpute/mcmc.hpp"
#include "calimpute/metrics.hpp"
#include "calimpute/pipeline.hpp"
#include "calimpute/regression.hpp"
#include "calimpute/residuals.hpp"
#include "calimpute/rng.hpp"
#include "calimpute/sim.hpp"

#endif // CALIMPUTE_HPP
