// Copyright 2026 The perfcal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "perfcal/deplearn.hpp"
#include "perfcal/error.hpp"
#include "perfcal/instrument.hpp"
#include "perfcal/model.hpp"
#include "perfcal/pipeline.hpp"
#include "perfcal/random.hpp"
#include "perfcal/rde.hpp"
#include "perfcal/records.hpp"
#include "perfcal/sim.hpp"
#include "perfcal/stoex.hpp"
#include "perfcal/validate.hpp"
