#pragma once

#include "jointvit/augment.hpp"
#include "jointvit/autodiff.hpp"
#include "jointvit/checkpoint.hpp"
#include "jointvit/config.hpp"
#include "jointvit/cross_validation.hpp"
#include "jointvit/dataset.hpp"
#include "jointvit/error.hpp"
#include "jointvit/grad_check.hpp"
#include "jointvit/image_io.hpp"
#include "jointvit/losses.hpp"
#include "jointvit/metrics.hpp"
#include "jointvit/model_check.hpp"
#include "jointvit/random.hpp"
#include "jointvit/synth.hpp"
#include "jointvit/tensor.hpp"
#include "jointvit/train.hpp"
#include "jointvit/vit.hpp"
