#pragma once

#include "bench.hpp"
#include "drivers.hpp"
#include "errors.hpp"
#include "krylov.hpp"
#include "linalg.hpp"
#include "matrix_io.hpp"
#include "objective.hpp"
#include "qep.hpp"
#include "rng.hpp"
#include "stiefel_newton.hpp"
