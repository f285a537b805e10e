#pragma once

// Umbrella header.

#include "splitboot/errors.hpp"
#include "splitboot/rng.hpp"
#include "splitboot/parallel.hpp"
#include "splitboot/stats.hpp"
#include "splitboot/dataset.hpp"
#include "splitboot/ee_core.hpp"
#include "splitboot/splitting.hpp"
#include "splitboot/distributions.hpp"
#include "splitboot/boot_test.hpp"
#include "splitboot/baselines.hpp"
#include "splitboot/models/index_model.hpp"
#include "splitboot/models/score_model.hpp"
#include "splitboot/sim_harness.hpp"
#include "splitboot/io.hpp"
