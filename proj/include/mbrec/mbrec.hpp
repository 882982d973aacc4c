#pragma once

// Umbrella header for the multi-behavior recommendation engine.

#include "mbrec/cascade.hpp"
#include "mbrec/checkpoint.hpp"
#include "mbrec/cli.hpp"
#include "mbrec/core.hpp"
#include "mbrec/data.hpp"
#include "mbrec/eval.hpp"
#include "mbrec/grad.hpp"
#include "mbrec/graph.hpp"
#include "mbrec/report.hpp"
#include "mbrec/train.hpp"
