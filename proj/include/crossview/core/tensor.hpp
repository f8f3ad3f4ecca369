#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace crossview {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

template <class... Args>
[[noreturn]] inline void fail(Args&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw Error(os.str());
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

/// Dense row-major tensor of doubles. Copies share storage; ops never
/// mutate their inputs, so sharing is safe. Use clone() for an owned copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(count(shape_), 0.0)) {}

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> data) {
    if (count(shape) != static_cast<int64_t>(data.size()))
      fail("tensor data size ", data.size(), " does not match shape count ", count(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<double>>(std::move(data));
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
  bool empty() const { return size() == 0; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  double& at3(int i, int j, int k) {
    return (*data_)[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at3(int i, int j, int k) const {
    return (*data_)[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  /// Same storage, new shape (element count must match).
  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != size())
      fail("reshape from ", shape_str(shape_), " to ", shape_str(shape), ": element count differs");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    return t;
  }

  void fill(double v) { std::fill(data_->begin(), data_->end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) fail("negative dimension in shape ", shape_str(shape));
      n *= d;
    }
    return n;
  }

  static std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  std::string shape_str() const { return shape_str(shape_); }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) fail("max_abs_diff: shape mismatch ", a.shape_str(), " vs ", b.shape_str());
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace crossview
