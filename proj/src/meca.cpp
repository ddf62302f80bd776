#include "carunet/meca.hpp"

#include <cmath>

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

Meca Meca::make(Rng& rng) {
  const double bound = 1.0 / std::sqrt(3.0);
  Meca m;
  m.kernel = Tensor(Shape{3}, true);
  for (Real& v : m.kernel.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
  return m;
}

Meca Meca::with_kernel(Real left, Real centre, Real right) {
  Meca m;
  m.kernel = Tensor(Shape{3}, {left, centre, right}, true);
  return m;
}

Tensor Meca::map(const Tensor& features) const {
  const Tensor avg = conv1d_shared(spatial_avg_pool(features), kernel);
  const Tensor max = conv1d_shared(spatial_max_pool(features), kernel);
  return sigmoid(add(avg, max));
}

Tensor Meca::apply(const Tensor& features) const { return channel_scale(features, map(features)); }

void Meca::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".kernel", kernel, true});
}

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
