/*
 Copyright 2026 The trajlayer Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

#include <cstdint>
#include <string>
#include <vector>

/**
 * @file
 * @brief Central-difference gradient checks of the QP adjoint, the DTO layer,
 * the encoder and the full training loss on tiny random instances.
 *
 * Instances whose QPs have a weakly active constraint (strict complementarity
 * margin below `margin`) are resampled: the solution map is not differentiable
 * there and finite differences straddle a kink.
 */

namespace trajlayer::gradcheck {

struct Options {
  int instances = 50;
  double step = 1e-5;
  double tolerance = 1e-3;
  double margin = 1e-4;
  std::uint64_t seed = 0;
  /// Test hook: scales every analytic gradient, so a check must fail when != 1.
  double pullback_scale = 1.0;
};

struct SuiteReport {
  std::string name;
  int instances = 0;   // checked
  int resampled = 0;   // rejected as weakly active
  double worst_rel_error = 0.0;
  bool passed = false;
};

SuiteReport check_qp(const Options& options);
SuiteReport check_dto(const Options& options);
SuiteReport check_encoder(const Options& options);
SuiteReport check_training(const Options& options);

/// All four suites, in the order qp, dto, encoder, training.
std::vector<SuiteReport> run_all(const Options& options);

}  // namespace trajlayer::gradcheck
