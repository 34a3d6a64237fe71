#pragma once

#include <stdexcept>
#include <string>

namespace drpo {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A prompt or response index outside the environment's registry.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Two objects disagree on prompt count or per-prompt vocabulary size.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value outside the mathematical domain (zero probability in a ratio, etc).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation's precondition or passed a bad config.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Exact enumeration would exceed the configured term budget.
class ResourceRefusal : public Error {
 public:
  using Error::Error;
};

}  // namespace drpo
