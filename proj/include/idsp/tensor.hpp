#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <map>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "idsp/error.hpp"

namespace idsp {

/// Dense row-major matrix of doubles. Vectors are n x 1 or 1 x n.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Tensor(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged tensor literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Tensor column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(n, 1, std::move(values));
  }
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Named trainable tensors. Iteration is lexicographic by name (std::map),
/// which fixes the order of every reduction and of the checkpoint layout.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  void add(std::string name, Tensor t) {
    auto [it, inserted] = tensors_.emplace(std::move(name), std::move(t));
    if (!inserted) throw ShapeError("duplicate parameter name '" + it->first + "'");
  }

  bool contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

  const Tensor& at(std::string_view name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }
  Tensor& at(std::string_view name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  /// Same names and shapes, every entry zero.
  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& [name, t] : tensors_) out.tensors_.emplace(name, Tensor(t.rows(), t.cols()));
    return out;
  }

  bool same_layout(const ParamStore& o) const {
    if (tensors_.size() != o.tensors_.size()) return false;
    auto a = tensors_.begin();
    auto b = o.tensors_.begin();
    for (; a != tensors_.end(); ++a, ++b) {
      if (a->first != b->first || !a->second.same_shape(b->second)) return false;
    }
    return true;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  std::size_t count() const { return tensors_.size(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  Map tensors_;
};

}  // namespace idsp
