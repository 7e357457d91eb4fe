#pragma once

#include "diffir/autograd.hpp"
#include "diffir/checkpoint.hpp"
#include "diffir/config.hpp"
#include "diffir/cost.hpp"
#include "diffir/cpen.hpp"
#include "diffir/data.hpp"
#include "diffir/denoiser.hpp"
#include "diffir/dirformer.hpp"
#include "diffir/image_io.hpp"
#include "diffir/json_io.hpp"
#include "diffir/losses.hpp"
#include "diffir/metrics.hpp"
#include "diffir/nn.hpp"
#include "diffir/pipeline.hpp"
#include "diffir/rng.hpp"
#include "diffir/schedule.hpp"
#include "diffir/tensor.hpp"
#include "diffir/training.hpp"
