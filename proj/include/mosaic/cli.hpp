// Command-line front end: gen-data, validate-dataset, grad-check, train,
// ablate, export-attn.

#pragma once

#include "mosaic/config.hpp"
#include "mosaic/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace mosaic::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,      ///< validation, tolerance or NaN failure
  kConfigError = 2,
  kIoError = 3,
};

/// args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Defaults for grad-check: 4x4 target, K=2, P=2, width 8, one block.
RunConfig grad_check_defaults();

/// Min-max scales to 0..255; a constant map becomes uniform 128.
std::vector<std::uint8_t> to_gray(const Matrix& values);

/// Binary PGM (P5, maxval 255) of a row-major grid of gray levels.
std::string encode_pgm(const std::vector<std::uint8_t>& pixels, GridSize grid);

}  // namespace mosaic::cli
