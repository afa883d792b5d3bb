// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "latentview/cache.hpp"
#include "latentview/camera.hpp"
#include "latentview/checkpoint.hpp"
#include "latentview/codec.hpp"
#include "latentview/common.hpp"
#include "latentview/conditioning.hpp"
#include "latentview/config.hpp"
#include "latentview/dataset.hpp"
#include "latentview/engine.hpp"
#include "latentview/fusion.hpp"
#include "latentview/image.hpp"
#include "latentview/metrics.hpp"
#include "latentview/nn.hpp"
#include "latentview/optim.hpp"
#include "latentview/pipeline.hpp"
#include "latentview/prior.hpp"
#include "latentview/schedule.hpp"
#include "latentview/synthetic.hpp"
#include "latentview/tensor.hpp"
#include "latentview/training.hpp"
#include "latentview/tunet.hpp"
