#pragma once

#include <stdexcept>
#include <string>

namespace catnet {

// Two families: ValidationError covers rejected inputs and broken contracts
// (CLI exit 1), RuntimeFailure covers failures while processing accepted
// inputs (CLI exit 2).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SizeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class RankError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class AxisError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class GraphError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IndexError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IntegrityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class TaxonomyError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DuplicateError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class CapacityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UsageError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EmptyDatasetError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class StructureError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UndefinedRecallError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DegenerateError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class CorruptionError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class DivergenceError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace catnet
