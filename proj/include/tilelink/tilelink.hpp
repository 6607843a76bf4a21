// Copyright 2026 The tilelink-sim Authors. All rights reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "tilelink/config.hpp"
#include "tilelink/dispatch.hpp"
#include "tilelink/errors.hpp"
#include "tilelink/kernels/attention.hpp"
#include "tilelink/kernels/checksum.hpp"
#include "tilelink/kernels/common.hpp"
#include "tilelink/kernels/gemm.hpp"
#include "tilelink/kernels/moe.hpp"
#include "tilelink/kernels/reference.hpp"
#include "tilelink/mapping.hpp"
#include "tilelink/runtime.hpp"
#include "tilelink/trace.hpp"
#include "tilelink/transfer.hpp"
#include "tilelink/types.hpp"
