#pragma once

#include <stdexcept>
#include <string>

namespace rcvqa {

// Every failure raised by the library carries a short machine-parsable
// category so the command-line front end can print one stable line.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define RCVQA_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(tag, what) {}       \
  };

RCVQA_DEFINE_ERROR(DimensionError, "dimension")
RCVQA_DEFINE_ERROR(ConfigError, "config")
RCVQA_DEFINE_ERROR(IndexError, "index")
RCVQA_DEFINE_ERROR(ContractError, "contract")
RCVQA_DEFINE_ERROR(InvalidMaskError, "invalid_mask")
RCVQA_DEFINE_ERROR(OracleError, "oracle")
RCVQA_DEFINE_ERROR(ParseError, "parse")
RCVQA_DEFINE_ERROR(DataError, "data")
RCVQA_DEFINE_ERROR(EmptyContextError, "empty_context")
RCVQA_DEFINE_ERROR(IoError, "io")
RCVQA_DEFINE_ERROR(UsageError, "usage")
RCVQA_DEFINE_ERROR(TrainingError, "training")

#undef RCVQA_DEFINE_ERROR

}  // namespace rcvqa
