#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xdfkit {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// format-core
class MagicError : public Error { public: using Error::Error; };
class TruncatedError : public Error { public: using Error::Error; };
class WidthError : public Error { public: using Error::Error; };
class FlagError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };

// timeline
class MissingStampError : public Error { public: using Error::Error; };
class DegenerateError : public Error { public: using Error::Error; };
class RateError : public Error { public: using Error::Error; };
class NoRegularStreamError : public Error { public: using Error::Error; };
class WindowError : public Error { public: using Error::Error; };

// annotations
class ValidationError : public Error { public: using Error::Error; };
class HeaderError : public Error { public: using Error::Error; };

class RowError : public Error {
public:
    RowError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// synthlab
class ConfigError : public Error { public: using Error::Error; };
class EdgeError : public Error { public: using Error::Error; };
class PhaseUndefinedError : public Error { public: using Error::Error; };
class MissingStreamError : public Error { public: using Error::Error; };

} // namespace xdfkit
