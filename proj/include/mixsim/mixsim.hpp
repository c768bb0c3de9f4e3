#pragma once

#include "mixsim/baselines.hpp"
#include "mixsim/common.hpp"
#include "mixsim/geometry.hpp"
#include "mixsim/harness/ehmi.hpp"
#include "mixsim/harness/opm_compare.hpp"
#include "mixsim/harness/run_matrix.hpp"
#include "mixsim/intent_reasoning.hpp"
#include "mixsim/maneuver.hpp"
#include "mixsim/maneuver_choice.hpp"
#include "mixsim/pipeline.hpp"
#include "mixsim/reasoner.hpp"
#include "mixsim/scenario.hpp"
#include "mixsim/scene_model.hpp"
#include "mixsim/sim_core.hpp"
#include "mixsim/trajectory_opt.hpp"
