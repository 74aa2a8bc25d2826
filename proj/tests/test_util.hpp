#pragma once

#include <random>

#include "lookupvit/lookup_block.hpp"

namespace testutil {

template <typename T = double>
lookupvit::Tensor<T> random_tensor(lookupvit::Shape s, std::mt19937_64& rng, double lo = -1,
                                   double hi = 1) {
  lookupvit::Tensor<T> t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T = double>
lookupvit::Tensor<T> identity(std::size_t d) {
  lookupvit::Tensor<T> t({d, d});
  for (std::size_t i = 0; i < d; ++i) t.at(i, i) = T{1};
  return t;
}

/// Block whose projections are all identity and whose norms are gamma=1, beta=0.
template <typename T = double>
lookupvit::BlockParams<T> identity_block(std::size_t d, const lookupvit::BlockOptions& opt) {
  lookupvit::Rng rng(0);
  auto b = lookupvit::init_block<T>(d, opt, rng);
  b.visit("", [&](const std::string& name, lookupvit::Tensor<T>& t) {
    if (t.rank() == 2 && t.dim(0) == d && t.dim(1) == d && name.find("mlp") == std::string::npos) {
      t = identity<T>(d);
    }
  });
  return b;
}

/// Every tensor of a block redrawn uniformly in [-0.5, 0.5] (norm gains around 1), so no
/// branch is trivially zero.
template <typename T = double>
void randomize(lookupvit::BlockParams<T>& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  b.visit("", [&](const std::string& name, lookupvit::Tensor<T>& t) {
    const bool gain = name.size() >= 5 && name.substr(name.size() - 5) == "gamma";
    for (auto& v : t.data()) v = static_cast<T>(gain ? 1.0 + u(rng) : u(rng));
  });
}

}  // namespace testutil
