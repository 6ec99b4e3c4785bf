#pragma once

#include <stdexcept>
#include <string>

namespace nonmarkov {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptySubgroup : public Error {
 public:
  EmptySubgroup() : Error("no subject occupies the starting set at s while under observation") {}
  explicit EmptySubgroup(const std::string& what) : Error(what) {}
};

class UndefinedProportion : public Error {
 public:
  explicit UndefinedProportion(double t)
      : Error("conditional proportion undefined: empty risk set at t=" + std::to_string(t)) {}
};

class ZeroRiskSet : public Error {
 public:
  explicit ZeroRiskSet(const std::string& what) : Error(what) {}
};

class TooManyFailures : public Error {
 public:
  TooManyFailures(std::size_t failed, std::size_t total)
      : Error("bootstrap aborted: " + std::to_string(failed) + " of " + std::to_string(total) +
              " replicates failed"),
        failed_(failed),
        total_(total) {}

  std::size_t failed() const noexcept { return failed_; }
  std::size_t total() const noexcept { return total_; }

 private:
  std::size_t failed_, total_;
};

class NonpositiveSE : public Error {
 public:
  NonpositiveSE() : Error("standard error must be positive") {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(what) {}
};

class DegenerateWeight : public Error {
 public:
  explicit DegenerateWeight(const std::string& what) : Error(what) {}
};

class DiagnosticsError : public Error {
 public:
  explicit DiagnosticsError(const std::string& what) : Error(what) {}
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(what) {}
  ValidationError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_ = 0;
};

}  // namespace nonmarkov
