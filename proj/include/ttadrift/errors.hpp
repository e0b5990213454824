#pragma once

#include <stdexcept>
#include <string>

namespace ttadrift {

// Every library failure carries a stable machine-readable code; the CLI prints
// it verbatim before the human-readable message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define TTADRIFT_DEFINE_ERROR(Name, Code)                                      \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& what) : Error(Code, what) {}         \
    }

TTADRIFT_DEFINE_ERROR(DimensionError, "E_DIMENSION");
TTADRIFT_DEFINE_ERROR(DomainError, "E_DOMAIN");
TTADRIFT_DEFINE_ERROR(DegenerateError, "E_DEGENERATE");
TTADRIFT_DEFINE_ERROR(ContractError, "E_CONTRACT");
TTADRIFT_DEFINE_ERROR(NumericError, "E_NUMERIC");
TTADRIFT_DEFINE_ERROR(ConfigError, "E_CONFIG");
TTADRIFT_DEFINE_ERROR(DivergenceError, "E_DIVERGENCE");
TTADRIFT_DEFINE_ERROR(IoError, "E_IO");
TTADRIFT_DEFINE_ERROR(CompatibilityError, "E_COMPATIBILITY");
TTADRIFT_DEFINE_ERROR(ValidationError, "E_VALIDATION");

#undef TTADRIFT_DEFINE_ERROR

} // namespace ttadrift
