#ifndef BAYESBOOST_BAYESBOOST_HPP
#define BAYESBOOST_BAYESBOOST_HPP

#include "types.hpp"
#include "rng.hpp"
#include "dataset.hpp"
#include "linalg.hpp"
#include "distributions.hpp"
#include "model_selection.hpp"
#include "boosting.hpp"
#include "simulation.hpp"
#include "model_io.hpp"

#endif
