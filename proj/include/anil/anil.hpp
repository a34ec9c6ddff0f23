#pragma once

#include "anil/core.hpp"
#include "anil/task_model.hpp"
#include "anil/dynamics.hpp"
#include "anil/theory.hpp"
#include "anil/diagnostics.hpp"
#include "anil/minimize.hpp"
#include "anil/baselines.hpp"
#include "anil/adaptation.hpp"
#include "anil/serialization.hpp"
#include "anil/harness.hpp"
