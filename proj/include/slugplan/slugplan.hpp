#pragma once

#include "slugplan/bench.hpp"
#include "slugplan/bstn.hpp"
#include "slugplan/error.hpp"
#include "slugplan/executor.hpp"
#include "slugplan/graph.hpp"
#include "slugplan/layers.hpp"
#include "slugplan/plan_report.hpp"
#include "slugplan/planner.hpp"
#include "slugplan/tensor.hpp"
#include "slugplan/traffic.hpp"
