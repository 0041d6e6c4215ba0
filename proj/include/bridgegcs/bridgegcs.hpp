#pragma once

#include "bridgegcs/error.hpp"
#include "bridgegcs/core/checkpoint.hpp"
#include "bridgegcs/core/io.hpp"
#include "bridgegcs/core/mlp.hpp"
#include "bridgegcs/core/optimizer.hpp"
#include "bridgegcs/core/parallel.hpp"
#include "bridgegcs/core/rng.hpp"
#include "bridgegcs/core/standardizer.hpp"
#include "bridgegcs/core/tensor.hpp"
#include "bridgegcs/env/dataset.hpp"
#include "bridgegcs/env/reservoir.hpp"
#include "bridgegcs/bridge/bridge.hpp"
#include "bridgegcs/bridge/views.hpp"
#include "bridgegcs/surrogate/surrogate.hpp"
#include "bridgegcs/planner/planner.hpp"
#include "bridgegcs/eval/metrics.hpp"
#include "bridgegcs/eval/experiments.hpp"
#include "bridgegcs/eval/report.hpp"
#include "bridgegcs/cli/config.hpp"
#include "bridgegcs/cli/manifest.hpp"
#include "bridgegcs/cli/pipeline.hpp"
#include "bridgegcs/cli/app.hpp"
