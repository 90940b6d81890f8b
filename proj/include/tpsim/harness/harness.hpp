#pragma once

#include "tpsim/harness/aggregate.hpp"
#include "tpsim/harness/results_io.hpp"
#include "tpsim/harness/run.hpp"
