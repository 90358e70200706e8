#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace streetcam {

// Base for every error raised by the library. The service layer maps the
// concrete subclasses onto HTTP status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class ImageDecodeError : public Error {
 public:
  ImageDecodeError(std::string image_id, const std::string& what)
      : Error(what), image_id_(std::move(image_id)) {}
  const std::string& image_id() const { return image_id_; }

 private:
  std::string image_id_;
};

class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

std::string join(const std::vector<std::string>& items, const std::string& sep = ", ");

}  // namespace streetcam
