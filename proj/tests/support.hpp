// Shared helpers for the unit tests.
#ifndef MURPHY_TEST_SUPPORT_HPP
#define MURPHY_TEST_SUPPORT_HPP

#include "murphy/ad.hpp"
#include "murphy/schema.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace murphy::test {

inline std::filesystem::path source_dir() { return MURPHY_SOURCE_DIR; }

inline LabelSchema rlls_schema() { return load_schema(source_dir() / "data" / "rlls_schema.json"); }

inline Mat<double> gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Mat<double> m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  return m;
}

inline std::vector<int> random_labels(int n, int width, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, width - 1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = u(rng);
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("murphy_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace murphy::test

#endif  // MURPHY_TEST_SUPPORT_HPP
