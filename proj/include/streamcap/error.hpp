#pragma once

#include <stdexcept>
#include <string>

namespace streamcap {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape / rank mismatches. Messages carry both offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Attention mask with an all-false row: no visible key to normalize over.
struct MaskError : Error {
  using Error::Error;
};

// Out-of-range scalar inputs (negative timestamps and the like).
struct RangeError : Error {
  using Error::Error;
};

// Token/vocabulary level failures.
struct CodecError : Error {
  using Error::Error;
};

// A single event's encoding does not fit the per-segment token budget.
struct LabelOverflowError : CodecError {
  using CodecError::CodecError;
};

struct ConfigError : Error {
  using Error::Error;
};

// Dataset / file schema violations.
struct DataError : Error {
  using Error::Error;
};

// Degenerate or non-finite training loss.
struct LossError : Error {
  using Error::Error;
};

}  // namespace streamcap
