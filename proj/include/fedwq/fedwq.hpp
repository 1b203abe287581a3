/*
 * Copyright 2026 The FedWQ Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "fedwq/aggregation.hpp"
#include "fedwq/calibration.hpp"
#include "fedwq/error.hpp"
#include "fedwq/evaluation.hpp"
#include "fedwq/experiment.hpp"
#include "fedwq/federation/network.hpp"
#include "fedwq/federation/simulator.hpp"
#include "fedwq/federation/wire.hpp"
#include "fedwq/models.hpp"
#include "fedwq/partition.hpp"
#include "fedwq/random.hpp"
#include "fedwq/scores.hpp"
#include "fedwq/synthetic.hpp"
#include "fedwq/theory.hpp"
