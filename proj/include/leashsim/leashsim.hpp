#pragma once

// Umbrella header for the simulator library.

#include "leashsim/csv.hpp"
#include "leashsim/errors.hpp"
#include "leashsim/event_select.hpp"
#include "leashsim/leash_loop.hpp"
#include "leashsim/scenario_file.hpp"
#include "leashsim/sched_core.hpp"
#include "leashsim/sim_engine.hpp"
#include "leashsim/workloads.hpp"
