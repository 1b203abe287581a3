/*
 * Copyright 2026 The FedWQ Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace fedwq {

// Base for every error raised by the library. The CLI maps subclasses to exit
// codes, the network layer maps them to error-message codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* code() const noexcept { return "error"; }
};

// Input violates a documented invariant or precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "validation"; }
};

class IndexError : public ValidationError {
 public:
  using ValidationError::ValidationError;
  const char* code() const noexcept override { return "index"; }
};

// Operation requested on a dataset of the wrong task kind.
class TaskMismatchError : public ValidationError {
 public:
  using ValidationError::ValidationError;
  const char* code() const noexcept override { return "task_mismatch"; }
};

// Peer broke the calibration round protocol (duplicate agent, wrong round...).
class ProtocolError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "protocol"; }
};

// Malformed bytes on the wire.
class ParseError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
  const char* code() const noexcept override { return "parse"; }
};

// Socket-level failure: refused, reset, timed out.
class TransportError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "transport"; }
};

// Server gave up on a round before all summaries arrived.
class RoundAbortedError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "round_aborted"; }
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace detail

}  // namespace fedwq
