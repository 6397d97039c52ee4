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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace perfcal {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed stochastic expression text. `position` is a byte offset.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Expression evaluation failure: unbound parameter, type mismatch,
/// stochastic node in a deterministic context, division by zero.
class EvalError : public Error {
 public:
  using Error::Error;
};

/// Schema or structural violation in a performance model. `pointer` is a
/// JSON pointer (or element id) locating the offending item.
class ModelError : public Error {
 public:
  ModelError(const std::string& pointer, const std::string& what)
      : Error(pointer.empty() ? what : pointer + ": " + what), pointer_(pointer) {}
  const std::string& pointer() const noexcept { return pointer_; }

 private:
  std::string pointer_;
};

class RecordError : public Error {
 public:
  using Error::Error;
};

/// Calibration failure; `stage` names the pipeline stage or estimator.
class CalibrationError : public Error {
 public:
  CalibrationError(const std::string& stage, const std::string& what)
      : Error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace perfcal
