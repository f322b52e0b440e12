// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "crystal_evolve/atl.hpp"
#include "crystal_evolve/cif.hpp"
#include "crystal_evolve/dataset.hpp"
#include "crystal_evolve/elements.hpp"
#include "crystal_evolve/error.hpp"
#include "crystal_evolve/evolution.hpp"
#include "crystal_evolve/fitness.hpp"
#include "crystal_evolve/graph.hpp"
#include "crystal_evolve/lattice.hpp"
#include "crystal_evolve/surrogate.hpp"
