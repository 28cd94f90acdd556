#include "error.hpp"

namespace valcon {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid argument";
        case ErrorKind::config: return "configuration error";
        case ErrorKind::network: return "network error";
        case ErrorKind::validation: return "validation error";
        case ErrorKind::parse: return "parse error";
        case ErrorKind::numeric: return "numeric error";
        case ErrorKind::internal: return "internal error";
    }
    return "unknown error";
}

}  // namespace valcon
