#include "depanx/error.hpp"

namespace depanx {

Error::Error(ErrorKind kind, std::string code, const std::string& message)
    : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

}  // namespace depanx
