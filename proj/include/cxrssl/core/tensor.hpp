#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <string>

namespace cxrssl {

// Dense row-major matrix; every tensor in the library is two-dimensional.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
bool all_finite(const Mat<T>& m) {
  const T* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

template <typename T>
std::string shape_str(const Mat<T>& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

template <typename U, typename T>
Mat<U> cast_mat(const Mat<T>& m) {
  return m.template cast<U>();
}

}  // namespace cxrssl
