#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stt {

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major tensor. Copies share the underlying buffer; tensors are
// treated as immutable once built, except gradient accumulators which are
// mutated through data() by their owning node. Use clone() for a deep copy.
template <typename S>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<S>>(checked_numel(shape_), S(0))) {}

  TensorT(std::vector<int> shape, std::vector<S> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<S>>(std::move(values))) {
    if (data_->size() != checked_numel(shape_)) {
      throw std::invalid_argument("tensor: data length " + std::to_string(data_->size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int> shape, S v) {
    TensorT t(std::move(shape));
    t.fill(v);
    return t;
  }

  static TensorT scalar(S v) { return TensorT({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }

  size_t numel() const { return data_ ? data_->size() : 0; }
  bool empty() const { return numel() == 0; }

  S* data() { return data_->data(); }
  const S* data() const { return data_->data(); }

  S& operator[](size_t i) { return (*data_)[i]; }
  const S& operator[](size_t i) const { return (*data_)[i]; }

  // rank-2 accessors
  int rows() const { return shape_.at(0); }
  int cols() const { return shape_.at(1); }
  S& at(int r, int c) { return (*data_)[static_cast<size_t>(r) * cols() + c]; }
  const S& at(int r, int c) const { return (*data_)[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  void fill(S v) { std::fill(data_->begin(), data_->end(), v); }

  TensorT clone() const {
    if (!data_) return TensorT();
    return TensorT(shape_, *data_);
  }

  bool all_finite() const {
    for (const S& v : *data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool shares_buffer(const TensorT& o) const { return data_ == o.data_; }

 private:
  static size_t checked_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension in " + shape_str(shape));
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  std::vector<int> shape_;
  std::shared_ptr<std::vector<S>> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace stt
