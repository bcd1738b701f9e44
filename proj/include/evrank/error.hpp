#pragma once

#include <stdexcept>
#include <string>

namespace evrank {

/// Base exception for all library errors. Messages are meant for humans and
/// name the offending input (file, line, field, query) when one exists.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace evrank
