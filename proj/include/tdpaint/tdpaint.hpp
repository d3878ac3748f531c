#pragma once

#include "autodiff.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "parameters.hpp"
#include "random.hpp"
#include "samplers.hpp"
#include "schedule.hpp"
#include "tensor.hpp"
#include "timemap.hpp"
#include "training.hpp"
