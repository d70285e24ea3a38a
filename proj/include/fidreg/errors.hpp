#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fidreg {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// geometry
class AngleNearPi : public Error {
 public:
  using Error::Error;
};

// cloud_io
class FormatError : public Error {
 public:
  using Error::Error;
};
class EmptyCloud : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};

// projection
class OriginPoint : public Error {
 public:
  using Error::Error;
};
class AllPointsOutOfFrame : public Error {
 public:
  using Error::Error;
};
class NoRangeSupport : public Error {
 public:
  using Error::Error;
};

// pose_svd
class DegenerateCorners : public Error {
 public:
  using Error::Error;
};

// initgraph
class NoObservations : public Error {
 public:
  using Error::Error;
};
class DisconnectedScan : public Error {
 public:
  DisconnectedScan(const std::string& what, std::vector<int> scans)
      : Error(what), scan_ids(std::move(scans)) {}
  std::vector<int> scan_ids;
};

// fgo
class MissingInitial : public Error {
 public:
  using Error::Error;
};
class SingularNormalEquations : public Error {
 public:
  using Error::Error;
};
class NonFiniteCost : public Error {
 public:
  using Error::Error;
};

// synth
class EmptyScan : public Error {
 public:
  using Error::Error;
};

// cli_eval
class ScanSetMismatch : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fidreg
