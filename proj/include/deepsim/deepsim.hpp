#pragma once

#include "deepsim/common.hpp"
#include "deepsim/data.hpp"
#include "deepsim/eval.hpp"
#include "deepsim/io.hpp"
#include "deepsim/label_map.hpp"
#include "deepsim/metrics.hpp"
#include "deepsim/network.hpp"
#include "deepsim/report.hpp"
#include "deepsim/sweep.hpp"
#include "deepsim/tensor.hpp"
#include "deepsim/train.hpp"
#include "deepsim/warp.hpp"
