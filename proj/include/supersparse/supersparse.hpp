#pragma once

#include "baselines.hpp"
#include "beta_solver.hpp"
#include "common.hpp"
#include "core_types.hpp"
#include "dataio.hpp"
#include "experiments.hpp"
#include "metrics.hpp"
#include "model_selection.hpp"
#include "similarity.hpp"
#include "trainer.hpp"
#include "z_optimizer.hpp"
