#include "core/tensor.hpp"

#include <cmath>
#include <sstream>

namespace rankseg {

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::fabs(v));
  return m;
}

std::string Tensor::dims_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << "x";
    os << dims_[i];
  }
  os << "]";
  return os.str();
}

}  // namespace rankseg
