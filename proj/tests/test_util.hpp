// tests/test_util.hpp

// Copyright 2026  The vkl Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef VKL_TESTS_TEST_UTIL_HPP
#define VKL_TESTS_TEST_UTIL_HPP

#include <cstdint>
#include <random>
#include <vector>

#include "vkl/tensor.hpp"

namespace vkl::test {

inline Tensor random_tensor(std::mt19937_64& rng,
                            std::vector<std::size_t> shape, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = u(rng);
  return t;
}

/// L x C matrix with rows on the probability simplex, entries bounded away
/// from zero (softmax of bounded logits).
inline Tensor random_simplex(std::mt19937_64& rng, std::size_t rows,
                             std::size_t cols, double logit_range = 2.0) {
  Tensor t({rows, cols});
  std::uniform_real_distribution<double> u(-logit_range, logit_range);
  for (std::size_t i = 0; i < rows; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      t(i, j) = std::exp(u(rng));
      z += t(i, j);
    }
    for (std::size_t j = 0; j < cols; ++j) t(i, j) /= z;
  }
  return t;
}

inline std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n,
                                      int num_classes) {
  std::uniform_int_distribution<int> u(0, num_classes - 1);
  std::vector<int> y(n);
  for (auto& v : y) v = u(rng);
  return y;
}

}  // namespace vkl::test

#endif  // VKL_TESTS_TEST_UTIL_HPP
