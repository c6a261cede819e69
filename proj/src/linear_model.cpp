#include "imaboost/linear_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace imaboost {

Matrix& Matrix::operator+=(const Matrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    throw std::invalid_argument("Matrix: shape mismatch in +=");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
  return *this;
}

Matrix& Matrix::operator*=(double k) {
  for (double& v : data_) v *= k;
  return *this;
}

double& LinearDetectorParams::at(std::size_t k) {
  const std::size_t nc = class_weights.values().size();
  return k < nc ? class_weights.values()[k] : loc_weights.values()[k - nc];
}

double LinearDetectorParams::at(std::size_t k) const {
  const std::size_t nc = class_weights.values().size();
  return k < nc ? class_weights.values()[k] : loc_weights.values()[k - nc];
}

bool LinearDetectorParams::all_finite() const {
  auto finite = [](double v) { return std::isfinite(v); };
  return std::all_of(class_weights.values().begin(), class_weights.values().end(), finite) &&
         std::all_of(loc_weights.values().begin(), loc_weights.values().end(), finite);
}

LinearDetectorParams& LinearDetectorParams::operator+=(const LinearDetectorParams& other) {
  class_weights += other.class_weights;
  loc_weights += other.loc_weights;
  return *this;
}

LinearDetectorParams& LinearDetectorParams::operator*=(double k) {
  class_weights *= k;
  loc_weights *= k;
  return *this;
}

namespace {
double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}
}  // namespace

std::vector<double> class_probabilities(const LinearDetectorParams& model,
                                        std::span<const double> feature) {
  if (feature.size() != model.feature_dim())
    throw std::invalid_argument("class_probabilities: feature dimension mismatch");
  const std::size_t k = model.class_weights.rows();
  std::vector<double> p(k);
  double top = -INFINITY;
  for (std::size_t c = 0; c < k; ++c) {
    p[c] = dot(model.class_weights.row(c), feature);
    top = std::max(top, p[c]);
  }
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - top);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

void predict_offsets(const LinearDetectorParams& model, std::span<const double> feature,
                     double out[4]) {
  if (feature.size() != model.feature_dim())
    throw std::invalid_argument("predict_offsets: feature dimension mismatch");
  for (std::size_t l = 0; l < 4; ++l) out[l] = dot(model.loc_weights.row(l), feature);
}

}  // namespace imaboost
