#pragma once

#include "nmodal/data.hpp"
#include "nmodal/downstream.hpp"
#include "nmodal/error.hpp"
#include "nmodal/eval.hpp"
#include "nmodal/losses.hpp"
#include "nmodal/model.hpp"
#include "nmodal/rng.hpp"
#include "nmodal/tensor.hpp"
