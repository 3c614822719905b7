#pragma once

#include "vssgp/core.hpp"
#include "vssgp/parameters.hpp"
#include "vssgp/features.hpp"
#include "vssgp/bounds.hpp"
#include "vssgp/gradient.hpp"
#include "vssgp/optimize.hpp"
#include "vssgp/random.hpp"
#include "vssgp/training.hpp"
#include "vssgp/predict.hpp"
#include "vssgp/baselines.hpp"
#include "vssgp/io.hpp"
#include "vssgp/imputation.hpp"
