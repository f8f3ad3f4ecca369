#pragma once

#include "crossview/config.hpp"
#include "crossview/core/autograd.hpp"
#include "crossview/core/geometry.hpp"
#include "crossview/core/gradcheck.hpp"
#include "crossview/core/nn.hpp"
#include "crossview/core/registry.hpp"
#include "crossview/core/rng.hpp"
#include "crossview/core/tensor.hpp"
#include "crossview/data/raster.hpp"
#include "crossview/data/synth.hpp"
#include "crossview/decode/cdad.hpp"
#include "crossview/eval/evaluate.hpp"
#include "crossview/eval/metrics.hpp"
#include "crossview/model.hpp"
#include "crossview/text.hpp"
#include "crossview/train/loop.hpp"
#include "crossview/train/loss.hpp"
#include "crossview/train/optim.hpp"
#include "crossview/train/serialize.hpp"
#include "crossview/vision/backbone.hpp"
#include "crossview/vision/cvwin.hpp"
