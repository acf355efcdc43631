#pragma once

#include <vector>

#include "stt/rng.hpp"
#include "stt/tensor.hpp"

namespace stt::test {

template <typename S>
TensorT<S> random_tensor(std::vector<int> shape, RandomSource& rng, double scale = 1.0) {
  TensorT<S> t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.gaussian() * scale);
  return t;
}

template <typename S>
bool bitwise_equal(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape()) return false;
  for (size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace stt::test
