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

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "trajlayer/common.hpp"

/**
 * @file
 * @brief Self-describing binary container shared by datasets and checkpoints.
 *
 * Layout: 8-byte magic, uint64 little-endian header length, UTF-8 JSON header,
 * then every array as little-endian float64 in column-major order, in the order
 * the header lists them. The header carries "schema_version", "arrays"
 * ([{name, rows, cols}]) and a free-form "meta" object.
 */

namespace trajlayer::io {

using Json = nlohmann::json;

struct NamedArray {
  std::string name;
  Matrix value;
};

struct Container {
  int schema_version = 0;
  Json meta = Json::object();
  std::vector<NamedArray> arrays;

  /// Throws IoError if the array is missing.
  const Matrix& array(const std::string& name) const;
  bool has(const std::string& name) const;
};

/// Writes to a temporary file in the target directory and renames it, so a
/// failed write never leaves a partial file. Throws IoError.
void write_container(const std::filesystem::path& path, const std::string& magic,
                     const Container& c);

/// Throws IoError on a bad magic, a schema version other than expected_version,
/// a malformed header, or a truncated body.
Container read_container(const std::filesystem::path& path, const std::string& magic,
                         int expected_version);

/// Atomic text write (same temp-and-rename scheme). Throws IoError.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace trajlayer::io
