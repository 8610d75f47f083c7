#pragma once

#include <stdexcept>
#include <string>

namespace tci {

/// Coarse failure classes. The CLI maps each one to a distinct exit code.
enum class ErrorCategory {
  Usage,
  Config,
  Io,
  DataFormat,
  Data,
};

const char* category_name(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

#define TCI_DEFINE_ERROR(Name, Category)                                  \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(Category, what) {}     \
  }

TCI_DEFINE_ERROR(UsageError, ErrorCategory::Usage);
TCI_DEFINE_ERROR(ConfigError, ErrorCategory::Config);
TCI_DEFINE_ERROR(IoError, ErrorCategory::Io);
TCI_DEFINE_ERROR(FormatError, ErrorCategory::DataFormat);
TCI_DEFINE_ERROR(OrderError, ErrorCategory::DataFormat);
TCI_DEFINE_ERROR(UnknownDetector, ErrorCategory::Data);
TCI_DEFINE_ERROR(GeometryError, ErrorCategory::Data);
TCI_DEFINE_ERROR(CalibrationError, ErrorCategory::Data);
TCI_DEFINE_ERROR(CalibrationMissing, ErrorCategory::Data);
TCI_DEFINE_ERROR(FitError, ErrorCategory::Data);

#undef TCI_DEFINE_ERROR

}  // namespace tci
