#pragma once

#include "cglue/analytic.hpp"
#include "cglue/bundle.hpp"
#include "cglue/domain.hpp"
#include "cglue/error.hpp"
#include "cglue/field.hpp"
#include "cglue/gluing.hpp"
#include "cglue/grid.hpp"
#include "cglue/kernel.hpp"
#include "cglue/norms.hpp"
#include "cglue/operators.hpp"
#include "cglue/parallel.hpp"
#include "cglue/solver.hpp"
