#pragma once

#include "korch/cost_model.hpp"
#include "korch/error.hpp"
#include "korch/fission.hpp"
#include "korch/graph.hpp"
#include "korch/greedy.hpp"
#include "korch/interpreter.hpp"
#include "korch/kernel_identifier.hpp"
#include "korch/node_set.hpp"
#include "korch/operator.hpp"
#include "korch/orchestrator.hpp"
#include "korch/partition.hpp"
#include "korch/pipeline.hpp"
#include "korch/primitive.hpp"
#include "korch/rewrite.hpp"
#include "korch/scheduler.hpp"
#include "korch/serialize.hpp"
#include "korch/tensor.hpp"
