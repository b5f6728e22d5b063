#pragma once

#include <stdexcept>
#include <string>

namespace maskwright {

// Base class for every error raised by the library. The CLI maps these to
// exit code 2; usage problems are reported separately.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define MASKWRIGHT_ERROR(Name)                 \
    class Name : public Error {                \
    public:                                    \
        using Error::Error;                    \
    }

MASKWRIGHT_ERROR(SizeError);
MASKWRIGHT_ERROR(ShapeError);
MASKWRIGHT_ERROR(AxisError);
MASKWRIGHT_ERROR(IndexError);
MASKWRIGHT_ERROR(DomainError);
MASKWRIGHT_ERROR(DegenerateMaskError);
MASKWRIGHT_ERROR(BatchError);
MASKWRIGHT_ERROR(ConfigError);
MASKWRIGHT_ERROR(StateError);
MASKWRIGHT_ERROR(DivergenceError);
MASKWRIGHT_ERROR(EmptyError);
MASKWRIGHT_ERROR(FormatError);
MASKWRIGHT_ERROR(CorruptionError);
MASKWRIGHT_ERROR(VersionError);
MASKWRIGHT_ERROR(IoError);

#undef MASKWRIGHT_ERROR

}  // namespace maskwright
