// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef APN_APN_HPP
#define APN_APN_HPP

#include "apn/types.hpp"
#include "apn/rng.hpp"
#include "apn/array_model.hpp"
#include "apn/ml_core.hpp"
#include "apn/derivatives.hpp"
#include "apn/fd_check.hpp"
#include "apn/flops.hpp"
#include "apn/result.hpp"
#include "apn/optimizer.hpp"
#include "apn/music.hpp"
#include "apn/harness.hpp"
#include "apn/experiments.hpp"
#include "apn/snapshot_io.hpp"
#include "apn/verification.hpp"

#endif // APN_APN_HPP
