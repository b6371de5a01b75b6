#pragma once

#include <stdexcept>
#include <string>

namespace sasegan {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// audio_pipeline
struct UnsupportedFormat : Error { using Error::Error; };
struct MalformedHeader : Error { using Error::Error; };
struct IoFailure : Error { using Error::Error; };
struct InvalidPadLen : Error { using Error::Error; };

// nn_core
struct ShapeMismatch : Error { using Error::Error; };
struct DegenerateKernel : Error { using Error::Error; };
struct UninitializedState : Error { using Error::Error; };

// self_attention
struct IndivisibleChannels : Error { using Error::Error; };
struct OutOfRangeLayer : Error { using Error::Error; };

// segan_model
struct InvalidConfig : Error { using Error::Error; };

// adversarial_training
struct DivergedLoss : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct CorruptFile : Error { using Error::Error; };
struct ConfigMismatch : VersionMismatch { using VersionMismatch::VersionMismatch; };

// quality_metrics
struct LengthMismatch : Error { using Error::Error; };
struct AllSilent : Error { using Error::Error; };
struct TooShort : Error { using Error::Error; };

}  // namespace sasegan
