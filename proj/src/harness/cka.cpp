#include <Eigen/Core>
#include <stdexcept>

#include "pdiff/harness.hpp"

namespace pdiff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMat centred(const Tensor& t, const char* name) {
  if (t.rows() < 2) throw std::invalid_argument(std::string("linear_cka: ") + name + " needs at least two rows");
  RowMat m = Eigen::Map<const RowMat>(t.data(), static_cast<Eigen::Index>(t.rows()),
                                      static_cast<Eigen::Index>(t.cols()));
  m.rowwise() -= m.colwise().mean();
  if (m.squaredNorm() == 0.0) throw std::invalid_argument(std::string("linear_cka: ") + name + " has zero variance");
  return m;
}

}  // namespace

double linear_cka(const Tensor& x, const Tensor& y) {
  if (x.rows() != y.rows()) {
    throw std::invalid_argument("linear_cka: row counts differ (" + std::to_string(x.rows()) + " vs " +
                                std::to_string(y.rows()) + ")");
  }
  const RowMat xc = centred(x, "X");
  const RowMat yc = centred(y, "Y");
  const double cross = (xc.transpose() * yc).squaredNorm();
  const double xx = (xc.transpose() * xc).norm();
  const double yy = (yc.transpose() * yc).norm();
  return cross / (xx * yy);
}

}  // namespace pdiff
