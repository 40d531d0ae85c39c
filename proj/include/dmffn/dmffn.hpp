#pragma once

#include "dmffn/tensor.hpp"
#include "dmffn/ops.hpp"
#include "dmffn/layers.hpp"
#include "dmffn/init.hpp"
#include "dmffn/attention.hpp"
#include "dmffn/conv_branch.hpp"
#include "dmffn/fusion.hpp"
#include "dmffn/config.hpp"
#include "dmffn/model.hpp"
#include "dmffn/image.hpp"
#include "dmffn/resample.hpp"
#include "dmffn/dataset.hpp"
#include "dmffn/metrics.hpp"
#include "dmffn/optim.hpp"
#include "dmffn/checkpoint.hpp"
#include "dmffn/trainer.hpp"
#include "dmffn/gradcheck.hpp"
#include "dmffn/gradcheck_suite.hpp"
