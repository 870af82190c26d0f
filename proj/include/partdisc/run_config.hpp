// Copyright 2026 The partdisc Authors.
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

// TOML run configuration for the toy trainer. Every section and key is
// optional; unspecified values keep their defaults. Unknown keys are rejected
// so typos do not silently fall back to defaults.
//
//   [data]     path = "features.pgcd"   (absent: generate from [synth])
//   [synth]    SynthConfig fields
//   [train]    TrainConfig scalars, mode = "baseline" | "pdr_only" | "full"
//   [loss]     LossConfig fields (tau_t and alpha are schedule endpoints)
//   [gmm]      GmmConfig fields
//   [augment]  AugmentConfig fields

#include <filesystem>
#include <string>

#include "partdisc/feature_store.hpp"
#include "partdisc/toy_trainer.hpp"

namespace partdisc {

struct RunConfig {
  std::string data_path;  // empty: synthesize
  SynthConfig synth;
  TrainConfig train;
};

RunConfig parse_run_config(const std::string& toml_text, const std::string& origin = "<string>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Every field, defaults included, as TOML that parse_run_config reads back
/// to an equal config.
std::string dump_run_config(const RunConfig& cfg);

}  // namespace partdisc
