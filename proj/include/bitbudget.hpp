// Copyright 2026 The bitbudget Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "bitbudget/allocator.hpp"
#include "bitbudget/bitgemm.hpp"
#include "bitbudget/config.hpp"
#include "bitbudget/errors.hpp"
#include "bitbudget/experiment.hpp"
#include "bitbudget/mnist.hpp"
#include "bitbudget/network.hpp"
#include "bitbudget/optim.hpp"
#include "bitbudget/quantization.hpp"
#include "bitbudget/runtime.hpp"
#include "bitbudget/tensor.hpp"
#include "bitbudget/training.hpp"
