#pragma once

#include <stdexcept>
#include <string>

namespace parsegen {

// Malformed or inconsistent caller input.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A raw parser label with no entry in the merge table.
class UnknownLabelError : public InputError {
 public:
  explicit UnknownLabelError(int label)
      : InputError("raw parse label " + std::to_string(label) +
                   " is not in the merge table"),
        label_(label) {}
  int label() const noexcept { return label_; }

 private:
  int label_;
};

// Missing prerequisite state: untrained phase, absent checkpoint, empty index.
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable, corrupt or version-mismatched file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace parsegen
