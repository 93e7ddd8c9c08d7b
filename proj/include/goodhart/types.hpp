/*
 * Copyright 2026 The goodhart Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace goodhart {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using VectorXd = Eigen::VectorXd;
using MatrixXd = Eigen::MatrixXd;
using VectorXi = Eigen::VectorXi;

/// Base of every error thrown by this library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidAction : public Error {
public:
  using Error::Error;
};

class EpisodeComplete : public Error {
public:
  using Error::Error;
};

class LengthMismatch : public Error {
public:
  using Error::Error;
};

class IndexOutOfRange : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

/// Least-squares design matrix lost rank; message lists the monomials.
class UnderdeterminedFit : public Error {
public:
  using Error::Error;
};

/// Density mask has no admissible node.
class NoFeasibleRegion : public Error {
public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NumericalAbort : public Error {
public:
  using Error::Error;
};

inline void require_same_length(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw LengthMismatch(std::string(what) + ": length " + std::to_string(a) +
                         " != " + std::to_string(b));
  }
}

}  // namespace goodhart
