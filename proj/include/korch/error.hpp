#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace korch {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class CycleError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class MissingInput : public Error {
 public:
  using Error::Error;
};

class DuplicateRule : public Error {
 public:
  using Error::Error;
};

class StateExplosion : public Error {
 public:
  StateExplosion(std::size_t reached, std::size_t cap)
      : Error("execution state count exceeded cap " + std::to_string(cap) + " (reached " +
              std::to_string(reached) + ")"),
        reached_(reached) {}
  std::size_t reached() const { return reached_; }

 private:
  std::size_t reached_;
};

class Infeasible : public Error {
 public:
  using Error::Error;
};

class Timeout : public Error {
 public:
  using Error::Error;
};

}  // namespace korch
