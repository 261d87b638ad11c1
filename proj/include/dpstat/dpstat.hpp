/*
 * Copyright 2026 The dpstat Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "dpstat/core/dataset.hpp"
#include "dpstat/core/grad_check.hpp"
#include "dpstat/core/loss.hpp"
#include "dpstat/core/losses.hpp"
#include "dpstat/core/rng.hpp"
#include "dpstat/core/sampling.hpp"
#include "dpstat/core/types.hpp"
#include "dpstat/glm_jl.hpp"
#include "dpstat/harness/config.hpp"
#include "dpstat/harness/experiment.hpp"
#include "dpstat/harness/fit.hpp"
#include "dpstat/harness/synthetic.hpp"
#include "dpstat/privacy/calibration.hpp"
#include "dpstat/privacy/noise.hpp"
#include "dpstat/recursive_reg.hpp"
#include "dpstat/spiderboost.hpp"
#include "dpstat/tree_spider.hpp"
