#pragma once

#include <stdexcept>
#include <string>

namespace pmg {

// Every error raised by the library derives from Error. The CLI maps the
// category to an exit code: usage/config -> 1, data -> 2, numeric -> 3.
enum class ErrorCategory { Usage, Data, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define PMG_DEFINE_ERROR(Name, Category)                                  \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(Category, what) {}     \
  };

PMG_DEFINE_ERROR(ConfigError, ErrorCategory::Usage)
PMG_DEFINE_ERROR(UsageError, ErrorCategory::Usage)
PMG_DEFINE_ERROR(ParameterError, ErrorCategory::Usage)
PMG_DEFINE_ERROR(SpecError, ErrorCategory::Usage)
PMG_DEFINE_ERROR(LevelError, ErrorCategory::Usage)
PMG_DEFINE_ERROR(ShapeError, ErrorCategory::Usage)
PMG_DEFINE_ERROR(InputError, ErrorCategory::Data)
PMG_DEFINE_ERROR(ParseError, ErrorCategory::Data)
PMG_DEFINE_ERROR(CheckpointError, ErrorCategory::Data)
PMG_DEFINE_ERROR(IoError, ErrorCategory::Data)
PMG_DEFINE_ERROR(DomainError, ErrorCategory::Numeric)
PMG_DEFINE_ERROR(NumericInputError, ErrorCategory::Numeric)
PMG_DEFINE_ERROR(LinearSolveError, ErrorCategory::Numeric)
PMG_DEFINE_ERROR(OrderUndefinedError, ErrorCategory::Numeric)
PMG_DEFINE_ERROR(TrainingError, ErrorCategory::Numeric)

#undef PMG_DEFINE_ERROR

}  // namespace pmg
