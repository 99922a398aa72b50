#pragma once

#include <stdexcept>
#include <string>

namespace crowdflow {

// Problems with dataset content or files. The CLI maps these to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DatasetLoadError : public DataError {
public:
    enum class Kind { Io, Manifest, Truncated, Checksum, Externals };

    DatasetLoadError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// An operation was invoked on an object that is not ready for it.
class InvalidState : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace crowdflow
