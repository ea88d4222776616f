#include "tgdm/tensor.hpp"

namespace tgdm::nn {

// Tensor is header-only; this TU anchors the template in the build.

template class Tensor<float>;
template class Tensor<double>;

}  // namespace tgdm::nn
