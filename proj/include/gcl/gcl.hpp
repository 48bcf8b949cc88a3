#pragma once

#include "gcl/autograd.hpp"
#include "gcl/data.hpp"
#include "gcl/distsim.hpp"
#include "gcl/error.hpp"
#include "gcl/inference.hpp"
#include "gcl/metrics.hpp"
#include "gcl/network.hpp"
#include "gcl/objective.hpp"
#include "gcl/serialize.hpp"
#include "gcl/tensor.hpp"
#include "gcl/training.hpp"
