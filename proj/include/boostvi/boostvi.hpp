#pragma once

#include "boostvi/random.hpp"
#include "boostvi/density.hpp"
#include "boostvi/quadrature.hpp"
#include "boostvi/models.hpp"
#include "boostvi/relbo.hpp"
#include "boostvi/boosting.hpp"
#include "boostvi/probes.hpp"
#include "boostvi/harness.hpp"
