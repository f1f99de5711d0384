#pragma once

#include <stdexcept>
#include <string>

namespace cat {

// Typed failures thrown by the tensor library and the training pipeline.
// Each names the contract it guards; messages carry the offending values.

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AxisOutOfRange : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LabelOutOfRange : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotScalar : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DetachedTensor : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BadHeadDim : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotSquareGrid : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BadImageSize : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TruncatedRecord : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BadMagic : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VersionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TruncatedFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TooFewSizes : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cat
