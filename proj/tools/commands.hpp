#pragma once

// Command-line front end. Exit codes: 0 ok, 2 bad input or flags,
// 3 numeric domain error, 4 file I/O failure.

namespace srr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitDomain = 3;
inline constexpr int kExitIo = 4;

int run(int argc, char** argv);

}  // namespace srr::cli
