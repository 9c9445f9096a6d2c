#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "tmask/error.hpp"
#include "oracles.hpp"

namespace tmask::testing {

using oracle::mask_vs_oracle;
using oracle::planted_tau;

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected tmask::Error";
  return ErrorCode::kInput;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tmask_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace tmask::testing
