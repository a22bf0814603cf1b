// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "nextsig/core.hpp"
#include "nextsig/policy.hpp"
#include "nextsig/rng.hpp"

namespace nextsig::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("nextsig-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline PolicyParams random_params(std::size_t V, std::size_t k, CounterRng& rng, double scale = 0.5) {
  PolicyParams p(V, k);
  for (double& v : p.values()) v = scale * (2.0 * rng.uniform() - 1.0);
  return p;
}

inline std::vector<TokenId> random_tokens(std::size_t V, std::size_t n, CounterRng& rng) {
  std::vector<TokenId> out(n);
  for (auto& t : out) t = static_cast<TokenId>(rng.below(V));
  return out;
}

}  // namespace nextsig::testing
