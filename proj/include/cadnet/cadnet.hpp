// Copyright 2026 The cadnet Authors. All Rights Reserved.
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

// Umbrella header for the OpenCV-free core.

#pragma once

#include "cadnet/checkpoint.hpp"
#include "cadnet/config.hpp"
#include "cadnet/detector.hpp"
#include "cadnet/error.hpp"
#include "cadnet/evaluation.hpp"
#include "cadnet/geometry.hpp"
#include "cadnet/image.hpp"
#include "cadnet/ingest.hpp"
#include "cadnet/netcore.hpp"
#include "cadnet/ops.hpp"
#include "cadnet/random.hpp"
#include "cadnet/synthetic.hpp"
#include "cadnet/targets.hpp"
#include "cadnet/tensor.hpp"
#include "cadnet/tiling.hpp"
