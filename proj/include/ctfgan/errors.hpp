/*
Copyright 2026 the ctfgan authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
you may obtain a copy of the License at

                http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ctfgan {

// A caller broke a documented precondition (shape/arity/range mismatch).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite or otherwise numerically invalid input.
class NumericDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Class label outside its declared label space.
class LabelDomainError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Missing or unusable data at runtime (empty pools, exhausted corpora).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem or codec failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupt or truncated serialized artifact (checkpoints, tensor bundles).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Config/manifest validation failure carrying every violation found.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<std::string> issues)
      : std::runtime_error(join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& i : v) {
      if (!s.empty()) s += "\n";
      s += i;
    }
    return s;
  }
  std::vector<std::string> issues_;
};

// Training run aborted (non-finite loss).
class TrainingAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void check_contract(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline void check_label(bool cond, const std::string& msg) {
  if (!cond) throw LabelDomainError(msg);
}

inline void check_numeric(bool cond, const std::string& msg) {
  if (!cond) throw NumericDomainError(msg);
}

}  // namespace ctfgan
