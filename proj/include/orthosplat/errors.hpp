#pragma once

#include <stdexcept>
#include <string>

namespace orthosplat {

// Malformed text input; the message carries the offending line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

class UnsupportedModelError : public std::runtime_error {
 public:
  explicit UnsupportedModelError(const std::string& model)
      : std::runtime_error("unsupported camera model: " + model),
        model_(model) {}

  const std::string& model() const { return model_; }

 private:
  std::string model_;
};

// Missing or undecodable image while replaying a scene.
class StreamError : public std::runtime_error {
 public:
  explicit StreamError(const std::string& path, const std::string& why = "")
      : std::runtime_error("stream error: " + path + (why.empty() ? "" : ": " + why)),
        path_(path) {}

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateTriangleError : public std::runtime_error {
 public:
  DegenerateTriangleError() : std::runtime_error("degenerate triangle") {}
};

class DimensionMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  IoError(const std::string& path, const std::string& why)
      : std::runtime_error(path + ": " + why), path_(path) {}

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace orthosplat
