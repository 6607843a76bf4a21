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

#include <stdexcept>
#include <string>

namespace tilelink {

// Base of everything the simulator throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid world, mapping or kernel configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An index (tile, rank, slot) outside its grid, or a shape mismatch.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Lookup of a dynamic mapping entry that was never filled.
class MappingError : public Error {
 public:
  using Error::Error;
};

// A wait exceeded the world timeout. what() lists every blocked unit.
class DeadlockError : public Error {
 public:
  using Error::Error;
};

// Race checker: a region was read before it was published.
class RaceViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace tilelink
