// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fat {

// Error taxonomy shared across the library. The CLI maps these to exit
// codes: ConfigError -> 2, DataError -> 3, NumericError -> 4. Shape and
// contract violations are programming/config mistakes and surface as 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct ContractError : Error {
  using Error::Error;
};

struct BoundsError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// A valid feature pair that cannot be combined (e.g. pairwise attention
// biases on the linear-attention path).
struct UnsupportedError : Error {
  using Error::Error;
};

}  // namespace fat
