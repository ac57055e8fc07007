#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "rcg/autograd.hpp"
#include "rcg/rng.hpp"

namespace rcg::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = scale * rng.normal();
  return t;
}

inline double sum_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("rcg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace rcg::test
