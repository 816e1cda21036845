#pragma once

#include <stdexcept>
#include <string>

namespace gavd {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// A weight vector that cannot be normalized (zero or negative mass).
struct DegenerateDistribution : Error {
  using Error::Error;
};

struct EmptyInput : Error {
  using Error::Error;
};

// AUROC is undefined when one label class is empty.
struct DegenerateLabels : Error {
  using Error::Error;
};

// Hidden state with zero RMS; the sink score divides by it.
struct DegenerateHidden : Error {
  using Error::Error;
};

struct SelectionMismatch : Error {
  using Error::Error;
};

struct InvalidCost : Error {
  using Error::Error;
};

// Keyframe tokens carry zero attention mass; nothing to scale up.
struct DegenerateRedistribution : Error {
  using Error::Error;
};

struct EmptyKeyframes : Error {
  using Error::Error;
};

struct TargetNotFound : Error {
  using Error::Error;
};

struct UnsupportedVersion : Error {
  using Error::Error;
};

// Malformed file or structure; message names the offending field.
struct ValidationError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

struct TrainingDiverged : Error {
  TrainingDiverged(const std::string& what, long step) : Error(what), step(step) {}
  long step;
};

}  // namespace gavd
