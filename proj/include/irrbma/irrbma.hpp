#ifndef IRRBMA_IRRBMA_HPP
#define IRRBMA_IRRBMA_HPP

#include "irrbma/model.hpp"
#include "irrbma/rng.hpp"
#include "irrbma/data.hpp"
#include "irrbma/optimize.hpp"
#include "irrbma/likelihood.hpp"
#include "irrbma/sampler.hpp"
#include "irrbma/evidence.hpp"
#include "irrbma/averaging.hpp"
#include "irrbma/simharness.hpp"

#endif // IRRBMA_IRRBMA_HPP
