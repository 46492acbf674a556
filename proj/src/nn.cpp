#include "mimnet/nn.hpp"

#include <cmath>

namespace mimnet {

template <typename T>
Conv<T> Conv<T>::create(Initializer& init, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                        std::size_t padding, bool zero) {
  Conv c;
  const Shape shape{out, in, kernel, kernel};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  c.weight = zero ? init.zeros<T>(shape) : init.uniform<T>(shape, std::sqrt(6.0) * bound);
  c.bias = init.zeros<T>({out});
  c.stride = stride;
  c.padding = padding;
  return c;
}

template <typename T>
void Conv<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
Conv<T> Conv<T>::detached() const {
  return Conv{weight.detach(), bias.detach(), stride, padding};
}

template <typename T>
Linear<T> Linear<T>::create(Initializer& init, std::size_t in, std::size_t out, bool zero) {
  Linear l;
  const double bound = std::sqrt(3.0 / static_cast<double>(in));
  l.weight = zero ? init.zeros<T>({in, out}) : init.uniform<T>({in, out}, bound);
  l.bias = init.zeros<T>({out});
  return l;
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
Linear<T> Linear<T>::detached() const {
  return Linear{weight.detach(), bias.detach()};
}

template struct Conv<float>;
template struct Conv<double>;
template struct Linear<float>;
template struct Linear<double>;

}  // namespace mimnet
