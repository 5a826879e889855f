#pragma once

#include "prunekit/bench.hpp"
#include "prunekit/config.hpp"
#include "prunekit/encoder.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/experiments.hpp"
#include "prunekit/io.hpp"
#include "prunekit/layers.hpp"
#include "prunekit/linalg.hpp"
#include "prunekit/matrix.hpp"
#include "prunekit/multitask.hpp"
#include "prunekit/optim.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/random.hpp"
#include "prunekit/tasks.hpp"
#include "prunekit/types.hpp"
