#pragma once

#include <stdexcept>
#include <string>

namespace fwsvd {

/// Base class for every error raised by the library. The category decides
/// the CLI exit status.
class Error : public std::runtime_error {
public:
    enum class Category { Usage = 2, Validation = 3, Numerical = 4, Io = 5 };

    Error(Category category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    Category category() const noexcept { return category_; }

private:
    Category category_;
};

/// Precondition violated by caller-supplied values (shapes, ranges, names).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what)
        : Error(Category::Validation, what) {}
};

/// Non-finite values or divergence during a numerical procedure.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what)
        : Error(Category::Numerical, what) {}
};

/// Filesystem failures and malformed on-disk data.
class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(Category::Io, what) {}
};

/// Container bytes that do not follow the on-disk layout.
class FormatError : public IoError {
public:
    explicit FormatError(const std::string& what) : IoError(what) {}
};

/// Mutually inconsistent command options.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what)
        : Error(Category::Usage, what) {}
};

}  // namespace fwsvd
