#pragma once

#include "ppfnn/error.hpp"
#include "ppfnn/grid.hpp"
#include "ppfnn/io.hpp"
#include "ppfnn/log.hpp"
#include "ppfnn/metrics.hpp"
#include "ppfnn/nn.hpp"
#include "ppfnn/parallel.hpp"
#include "ppfnn/pipeline.hpp"
#include "ppfnn/powerflow.hpp"
#include "ppfnn/random.hpp"
#include "ppfnn/sampling.hpp"
#include "ppfnn/training.hpp"
