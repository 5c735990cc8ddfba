#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "epiglab/prob_cube.hpp"
#include "epiglab/rng.hpp"

namespace fixtures {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("epiglab-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

/// Rows drawn from a softmax of scaled normals; `sparsity` of the entries are
/// zeroed before renormalising, so leaf-like zero probabilities occur.
inline void fill_random_rows(epiglab::ProbCube& cube, epiglab::Rng& rng, double scale = 2.0, double sparsity = 0.0) {
  for (std::size_t k = 0; k < cube.k(); ++k) {
    for (std::size_t i = 0; i < cube.n(); ++i) {
      auto row = cube.row(k, i);
      double sum = 0.0;
      for (auto& v : row) {
        v = (sparsity > 0.0 && rng.uniform01() < sparsity) ? 0.0 : std::exp(scale * rng.normal());
        sum += v;
      }
      if (sum == 0.0) {
        row[rng.uniform_index(row.size())] = 1.0;
        sum = 1.0;
      }
      for (auto& v : row) v /= sum;
    }
  }
}

inline epiglab::ProbCube random_cube(std::size_t k, std::size_t n, std::size_t c, epiglab::Rng& rng,
                                     double scale = 2.0, double sparsity = 0.0) {
  epiglab::ProbCube cube(k, n, c);
  fill_random_rows(cube, rng, scale, sparsity);
  return cube;
}

}  // namespace fixtures
