#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace imaboost {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  Matrix& operator+=(const Matrix& other);
  Matrix& operator*=(double k);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Parameters of the linear reference detector: a softmax scorer over C+1
/// classes (row 0 is background) and a linear offset regressor, both reading
/// the per-anchor feature vector.
struct LinearDetectorParams {
  Matrix class_weights;  // (C+1) x d
  Matrix loc_weights;    // 4 x d

  LinearDetectorParams() = default;
  LinearDetectorParams(int num_classes, std::size_t feature_dim)
      : class_weights(static_cast<std::size_t>(num_classes) + 1, feature_dim),
        loc_weights(4, feature_dim) {}

  int num_classes() const { return static_cast<int>(class_weights.rows()) - 1; }
  std::size_t feature_dim() const { return class_weights.cols(); }

  /// Number of scalar parameters; parameters are indexed class weights
  /// first, then loc weights, both row-major.
  std::size_t size() const { return class_weights.values().size() + loc_weights.values().size(); }
  double& at(std::size_t k);
  double at(std::size_t k) const;

  bool all_finite() const;

  LinearDetectorParams& operator+=(const LinearDetectorParams& other);
  LinearDetectorParams& operator*=(double k);

  friend bool operator==(const LinearDetectorParams&, const LinearDetectorParams&) = default;
};

/// Numerically stable softmax of W x.
std::vector<double> class_probabilities(const LinearDetectorParams& model,
                                        std::span<const double> feature);

/// W_loc x.
void predict_offsets(const LinearDetectorParams& model, std::span<const double> feature,
                     double out[4]);

}  // namespace imaboost
