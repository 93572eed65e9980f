#pragma once

#include "errors.hpp"
#include "tensor.hpp"
#include "ops.hpp"
#include "nn.hpp"
#include "model.hpp"
#include "distill.hpp"
#include "optim.hpp"
#include "data.hpp"
#include "datasets.hpp"
#include "metrics.hpp"
#include "checkpoint.hpp"
#include "trainers.hpp"
#include "experiment.hpp"
