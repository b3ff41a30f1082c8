// Copyright 2026 The BIRE Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include "bire/common.hpp"
#include "bire/model.hpp"
#include "bire/ars.hpp"
#include "bire/estep.hpp"
#include "bire/mstep.hpp"
#include "bire/mcem.hpp"
#include "bire/parallel.hpp"
#include "bire/eval.hpp"
#include "bire/baselines.hpp"
#include "bire/io.hpp"
