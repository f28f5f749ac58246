#pragma once

#include <stdexcept>
#include <string>

namespace sauge {

/// Shapes of two grids/tensors that must agree do not.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A configuration value is outside its admissible range.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A call argument (granularity, candidate count, annotation list...) is invalid.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Reading a manifest, image, checkpoint or feature record failed.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace sauge
