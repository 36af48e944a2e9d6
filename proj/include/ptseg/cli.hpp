// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

namespace ptseg {

/// Exit code when a check (gradcheck) runs but does not pass.
inline constexpr int kExitCheckFailed = 1;
/// Exit code for unexpected internal errors.
inline constexpr int kExitInternal = 70;

/// Entry point of the `ptseg` binary. Events go to `out` as JSON lines;
/// failures print one JSON object to `err` and return the error code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ptseg
