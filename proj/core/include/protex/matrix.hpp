#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace protex {

/// Dense row-major matrix. Rows are the natural unit (one prototype, one
/// token, one patch), so most access goes through row().
template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) {
    assert(r < rows_);
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const T> row(std::size_t r) const {
    assert(r < rows_);
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }

  template <class U>
  void append_row(std::span<const U> values) {
    assert(rows_ == 0 || values.size() == cols_);
    if (rows_ == 0) cols_ = values.size();
    for (const U& v : values) data_.push_back(static_cast<T>(v));
    ++rows_;
  }

  void erase_row(std::size_t r) {
    assert(r < rows_);
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(r * cols_);
    data_.erase(first, first + static_cast<std::ptrdiff_t>(cols_));
    --rows_;
  }

  void erase_col(std::size_t c) {
    assert(c < cols_);
    std::vector<T> next;
    next.reserve(rows_ * (cols_ - 1));
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t k = 0; k < cols_; ++k)
        if (k != c) next.push_back(data_[r * cols_ + k]);
    data_ = std::move(next);
    --cols_;
  }

  void append_col(std::span<const T> values) {
    assert(values.size() == rows_);
    std::vector<T> next;
    next.reserve(rows_ * (cols_ + 1));
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t k = 0; k < cols_; ++k) next.push_back(data_[r * cols_ + k]);
      next.push_back(values[r]);
    }
    data_ = std::move(next);
    ++cols_;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Mat = Matrix<double>;
using FMat = Matrix<float>;

}  // namespace protex
