#pragma once

#include <stdexcept>
#include <string>

namespace blipmsm {

// Error categories surfaced to callers (and mapped to CLI exit codes).
enum class errc {
  missing_column,
  non_binary_value,
  empty_dataset,
  empty_subset,
  invalid_fold_count,
  singular_design,
  nonconvergence,
  empty_library,
  duplicate_learner,
  degenerate_folds,
  positivity_violation,
  dimension_mismatch,
  unknown_dgp,
  empty_cell,
  degenerate_blip,
  singular_normalizer,
  insufficient_data,
  invalid_config,
  io_error,
};

const char* errc_name(errc c);

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  errc code() const { return code_; }

 private:
  errc code_;
};

}  // namespace blipmsm
