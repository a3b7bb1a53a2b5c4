// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace colonsplat {

// Process exit codes; the stable CLI contract.
enum class ExitCode : int {
    Success = 0,
    Usage = 2,     // bad flags, bad config, bad input data
    Io = 3,        // filesystem and format failures
    Numerical = 4, // non-finite values during optimization
};

class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& msg)
        : std::runtime_error(msg), mCode(code) {}
    ExitCode exit_code() const { return mCode; }

private:
    ExitCode mCode;
};

struct UsageError : Error {
    explicit UsageError(const std::string& m) : Error(ExitCode::Usage, m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ExitCode::Io, m) {}
};
struct NumericalError : Error {
    explicit NumericalError(const std::string& m) : Error(ExitCode::Numerical, m) {}
};

struct MalformedPly : IoError {
    explicit MalformedPly(const std::string& m) : IoError("malformed ply: " + m) {}
};
struct InvalidCount : IoError {
    explicit InvalidCount(const std::string& m) : IoError("invalid count: " + m) {}
};
struct NoValidDepth : UsageError {
    explicit NoValidDepth(const std::string& m) : UsageError("no valid depth: " + m) {}
};
struct DimMismatch : UsageError {
    explicit DimMismatch(const std::string& m) : UsageError("dimension mismatch: " + m) {}
};
struct AuxMismatch : UsageError {
    explicit AuxMismatch(const std::string& m) : UsageError("aux mismatch: " + m) {}
};
struct TooFewGaussians : UsageError {
    explicit TooFewGaussians(const std::string& m) : UsageError("too few gaussians: " + m) {}
};
struct NoValidPixels : UsageError {
    explicit NoValidPixels(const std::string& m) : UsageError("no valid pixels: " + m) {}
};
struct EmptyTrainSplit : UsageError {
    explicit EmptyTrainSplit(const std::string& m) : UsageError("empty train split: " + m) {}
};
struct EmptyCloud : UsageError {
    explicit EmptyCloud(const std::string& m) : UsageError("empty cloud: " + m) {}
};
struct CameraOutsideTube : UsageError {
    explicit CameraOutsideTube(const std::string& m) : UsageError("camera outside tube: " + m) {}
};
struct NonFiniteLoss : NumericalError {
    NonFiniteLoss(long iteration, const std::string& m)
        : NumericalError("non-finite loss at iteration " + std::to_string(iteration) + ": " + m),
          iteration(iteration) {}
    long iteration;
};

} // namespace colonsplat
