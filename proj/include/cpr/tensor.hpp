#pragma once

// Dense rank<=2 double tensor. Row-major storage, value semantics.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpr {

namespace detail {

template <class... Ts>
std::string str(Ts&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0)
      throw std::invalid_argument(detail::str("negative tensor shape ", rows, "x", cols));
    v_.assign(static_cast<size_t>(rows) * static_cast<size_t>(cols), 0.0);
  }

  static Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }

  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v_[0] = x;
    return t;
  }

  static Tensor column(const std::vector<double>& xs) {
    Tensor t(static_cast<int>(xs.size()), 1);
    t.v_ = xs;
    return t;
  }

  static Tensor from_rows(int rows, int cols, std::vector<double> data) {
    if (data.size() != static_cast<size_t>(rows) * static_cast<size_t>(cols))
      throw std::invalid_argument(detail::str("tensor data size ", data.size(),
                                              " does not match shape ", rows, "x", cols));
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.v_ = std::move(data);
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }

  double& operator()(int r, int c) { return v_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return v_[static_cast<size_t>(r) * cols_ + c]; }
  double& operator[](int i) { return v_[static_cast<size_t>(i)]; }
  double operator[](int i) const { return v_[static_cast<size_t>(i)]; }

  std::vector<double>& data() { return v_; }
  const std::vector<double>& data() const { return v_; }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

  double scalar_value() const {
    if (!is_scalar())
      throw std::invalid_argument(detail::str("expected scalar, got ", shape_str()));
    return v_[0];
  }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string shape_str() const { return detail::str(rows_, "x", cols_); }

  bool operator==(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && v_ == o.v_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> v_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(
        detail::str(op, ": shape mismatch ", a.shape_str(), " vs ", b.shape_str()));
}

}  // namespace cpr
