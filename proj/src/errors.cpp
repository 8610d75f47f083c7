#include "tci/errors.hpp"

namespace tci {

const char* category_name(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Usage: return "usage";
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Io: return "io";
    case ErrorCategory::DataFormat: return "data-format";
    case ErrorCategory::Data: return "data";
  }
  return "unknown";
}

}  // namespace tci
