// Copyright 2026 The PanDepth Authors.
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

#ifndef PANDEPTH_PANDEPTH_HPP_
#define PANDEPTH_PANDEPTH_HPP_

#include "pandepth/backbone.hpp"
#include "pandepth/checkpoint.hpp"
#include "pandepth/config.hpp"
#include "pandepth/datapipe.hpp"
#include "pandepth/depth_branch.hpp"
#include "pandepth/fusion.hpp"
#include "pandepth/harness.hpp"
#include "pandepth/instance_branch.hpp"
#include "pandepth/joint_branch.hpp"
#include "pandepth/losses.hpp"
#include "pandepth/metrics.hpp"
#include "pandepth/model.hpp"
#include "pandepth/panoptic_io.hpp"
#include "pandepth/recon3d.hpp"
#include "pandepth/semantic_branch.hpp"

#endif  // PANDEPTH_PANDEPTH_HPP_
