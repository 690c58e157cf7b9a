// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace simdet {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes / axes.
struct ShapeError : Error { using Error::Error; };
// Tape structure problems (unknown ids, non-scalar loss, bad topology).
struct GraphError : Error { using Error::Error; };
// Violated call contracts (missing saved state, missing gradients, ...).
struct ContractError : Error { using Error::Error; };
// Checkpoint plan validation.
struct PlanError : Error { using Error::Error; };
// Memory trace bookkeeping.
struct TraceError : Error { using Error::Error; };
// BN with a degenerate (count < 2) batch.
struct DegenerateBatchError : Error { using Error::Error; };
// Non-invertible IABN parameterization.
struct NonInvertibleError : Error { using Error::Error; };
// Point-to-point transport failures.
struct TransportError : Error { using Error::Error; };
// Collective/PS protocol violations (out-of-sync sequence, double push).
struct ProtocolError : Error { using Error::Error; };
// Collective argument mismatch across ranks.
struct CollectiveError : Error { using Error::Error; };
// Unknown parameter-server key.
struct KeyError : Error { using Error::Error; };
// Bad algorithm parameters (sigma <= 0, ...).
struct ParamError : Error { using Error::Error; };
// Config parsing/validation; message carries the offending key path.
struct ConfigError : Error { using Error::Error; };
// Checkpoint file format problems.
struct FormatError : Error { using Error::Error; };

} // namespace simdet
