#pragma once

#include "rgd/numerics.hpp"
#include "rgd/parallel.hpp"
#include "rgd/layers.hpp"
#include "rgd/nets.hpp"
#include "rgd/checkpoint.hpp"
#include "rgd/schedule.hpp"
#include "rgd/optim.hpp"
#include "rgd/data.hpp"
#include "rgd/attack.hpp"
#include "rgd/diffusion_train.hpp"
#include "rgd/classifier_train.hpp"
#include "rgd/sampler.hpp"
#include "rgd/eval.hpp"
#include "rgd/analysis.hpp"
#include "rgd/config.hpp"
#include "rgd/cli.hpp"
