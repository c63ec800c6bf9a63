#pragma once

#include <stdexcept>
#include <string>

namespace xtra {

// Shape/dimension mismatch between tensors or against a layout.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structurally invalid attention mask (e.g. a fully masked query row).
struct MaskError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or truncated binary file (dataset, checkpoint).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated operation contract (non-scalar loss, non-finite values, bad config).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace xtra
