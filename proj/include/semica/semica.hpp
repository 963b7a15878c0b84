#pragma once

#include "semica/model.hpp"
#include "semica/simulate.hpp"
#include "semica/cumulants.hpp"
#include "semica/tensor_decomp.hpp"
#include "semica/recovery.hpp"
#include "semica/pipeline.hpp"
#include "semica/experiments.hpp"
