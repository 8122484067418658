// Copyright 2026 The AttCDC Authors. All Rights Reserved.
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

#ifndef ATTCDC_ERROR_HPP_
#define ATTCDC_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace attcdc {

/// Shape or dimensionality of an argument does not match the operation.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

/// A configuration value is invalid (bad stride/padding combination,
/// non-divisible attention reduction, malformed fractions, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A call-site precondition was violated (backward on a non-scalar,
/// empty batch, out-of-range class index, ...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// File could not be read/written.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// A file exists but its contents are not what the parser expects
/// (bad magic, truncation, CRC mismatch, malformed image).
class FormatError : public IoError {
 public:
  explicit FormatError(const std::string& what) : IoError(what) {}
};

/// Checkpoint carries an unsupported format version.
class VersionError : public FormatError {
 public:
  explicit VersionError(const std::string& what) : FormatError(what) {}
};

/// Checkpoint contents do not match the model it is being loaded into.
class MismatchError : public IoError {
 public:
  explicit MismatchError(const std::string& what) : IoError(what) {}
};

}  // namespace attcdc

#endif  // ATTCDC_ERROR_HPP_
