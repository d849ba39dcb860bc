#pragma once

// Central finite-difference checks of the autodiff engine, run in double
// precision. Each case builds random inputs for a random small shape and a
// function of them; the scalar probed is sum(f(inputs) * r) for a fixed
// random r.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "kamim/losses.hpp"
#include "kamim/masking.hpp"
#include "kamim/tensor.hpp"

namespace kamim::gradcheck {

using Inputs = std::vector<Tensor64>;

struct Case {
  std::string name;
  std::function<Inputs(Rng&)> make;
  std::function<Tensor64(const Inputs&)> f;
};

struct Outcome {
  std::string name;
  int shapes = 0;
  std::int64_t compared = 0;
  double worst = 0.0;
};

inline Tensor64 random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor64::from_data(std::move(shape), std::move(v), true);
}

// Values away from zero (for |x|, relu and denominators).
inline Tensor64 away_from_zero(Shape shape, Rng& rng, double lo = 0.1, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi) * (rng.below(2) ? 1.0 : -1.0);
  return Tensor64::from_data(std::move(shape), std::move(v), true);
}

// Rank 1..3, extents 1..4, at most 64 elements.
inline Shape random_shape(Rng& rng, int min_rank = 1, int max_rank = 3) {
  const int rank = min_rank + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_rank - min_rank + 1)));
  Shape s;
  for (int i = 0; i < rank; ++i) s.push_back(1 + static_cast<std::int64_t>(rng.below(4)));
  return s;
}

inline double probe(const Tensor64& out, const std::vector<double>& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) acc += out.data()[i] * r[i];
  return acc;
}

/// Checks one case on `shapes` random draws; relative error is measured
/// elementwise where |analytic| > 1e-4.
inline Outcome run(const Case& c, int shapes, std::uint64_t seed, double h = 1e-3) {
  Outcome res{c.name};
  Rng rng(seed);
  for (int s = 0; s < shapes; ++s) {
    Inputs in = c.make(rng);
    Tensor64 out = c.f(in);
    std::vector<double> r(static_cast<std::size_t>(out.numel()));
    for (auto& x : r) x = rng.uniform(-1.0, 1.0);
    const auto weights = Tensor64::from_data(out.shape(), r);
    sum(mul(out, weights)).backward();
    for (auto& t : in) {
      if (!t.requires_grad()) continue;
      const auto analytic = t.grad_or_zeros();
      for (std::int64_t i = 0; i < t.numel(); ++i) {
        auto data = t.mutable_data();
        const double x0 = data[i];
        data[i] = x0 + h;
        double fp;
        double fm;
        {
          NoGradGuard ng;
          fp = probe(c.f(in), r);
          data[i] = x0 - h;
          fm = probe(c.f(in), r);
        }
        data[i] = x0;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[static_cast<std::size_t>(i)];
        if (std::abs(a) <= 1e-4) continue;
        const double rel = std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric));
        res.worst = std::max(res.worst, rel);
        ++res.compared;
      }
    }
    ++res.shapes;
  }
  return res;
}

inline std::vector<Case> standard_cases() {
  std::vector<Case> cases;
  auto unary = [&](std::string name, std::function<Tensor64(const Tensor64&)> op, bool kink) {
    cases.push_back({std::move(name),
                     [kink](Rng& rng) {
                       const Shape s = random_shape(rng);
                       return Inputs{kink ? away_from_zero(s, rng, 0.05, 2.0) : random_tensor(s, rng, -2.0, 2.0)};
                     },
                     [op](const Inputs& x) { return op(x[0]); }});
  };
  unary("exp", [](const Tensor64& x) { return exp(x); }, false);
  unary("gelu", [](const Tensor64& x) { return gelu(x); }, false);
  unary("relu", [](const Tensor64& x) { return relu(x); }, true);
  unary("abs", [](const Tensor64& x) { return abs(x); }, true);
  unary("scale", [](const Tensor64& x) { return scale(x, -1.7); }, false);
  unary("add_scalar", [](const Tensor64& x) { return add_scalar(x, 0.3); }, false);

  // binary ops: same shape, or the second operand a suffix of the first
  auto binary = [&](std::string name, std::function<Tensor64(const Tensor64&, const Tensor64&)> op, bool denom) {
    cases.push_back({std::move(name),
                     [denom](Rng& rng) {
                       const Shape s = random_shape(rng);
                       Shape t = s;
                       const auto drop = rng.below(s.size() + 1);
                       t.erase(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(drop));
                       if (t.empty()) t = {s.back()};
                       const bool swap = rng.below(2) == 1;
                       Tensor64 a = random_tensor(swap ? t : s, rng);
                       Tensor64 b = denom ? away_from_zero(swap ? s : t, rng, 0.5, 2.0) : random_tensor(swap ? s : t, rng);
                       return Inputs{a, b};
                     },
                     [op](const Inputs& x) { return op(x[0], x[1]); }});
  };
  binary("add", [](const Tensor64& a, const Tensor64& b) { return add(a, b); }, false);
  binary("sub", [](const Tensor64& a, const Tensor64& b) { return sub(a, b); }, false);
  binary("mul", [](const Tensor64& a, const Tensor64& b) { return mul(a, b); }, false);
  binary("div", [](const Tensor64& a, const Tensor64& b) { return div(a, b); }, true);

  cases.push_back({"matmul",
                   [](Rng& rng) {
                     const std::int64_t M = 1 + rng.below(4), K = 1 + rng.below(4), N = 1 + rng.below(4);
                     switch (rng.below(3)) {
                       case 0: return Inputs{random_tensor({M, K}, rng), random_tensor({K, N}, rng)};
                       case 1: {
                         const std::int64_t B = 1 + rng.below(3);
                         return Inputs{random_tensor({B, M, K}, rng), random_tensor({B, K, N}, rng)};
                       }
                       default: {
                         const std::int64_t B = 1 + rng.below(3);
                         return Inputs{random_tensor({B, M, K}, rng), random_tensor({K, N}, rng)};
                       }
                     }
                   },
                   [](const Inputs& x) { return matmul(x[0], x[1]); }});

  cases.push_back({"softmax",
                   [](Rng& rng) { return Inputs{random_tensor(random_shape(rng), rng, -2.0, 2.0)}; },
                   [](const Inputs& x) {
                     const int axis = static_cast<int>(x[0].numel() % x[0].rank());
                     return softmax(x[0], axis);
                   }});

  cases.push_back({"layer_norm",
                   [](Rng& rng) {
                     Shape s = random_shape(rng);
                     s.back() = 2 + static_cast<std::int64_t>(rng.below(5));
                     const std::int64_t D = s.back();
                     return Inputs{random_tensor(s, rng, -2.0, 2.0), random_tensor({D}, rng, 0.5, 1.5),
                                   random_tensor({D}, rng)};
                   },
                   [](const Inputs& x) { return layer_norm(x[0], x[1], x[2], 1e-5); }});

  auto reduction = [&](std::string name, bool average) {
    cases.push_back({std::move(name),
                     [](Rng& rng) { return Inputs{random_tensor(random_shape(rng), rng)}; },
                     [average](const Inputs& x) {
                       // reduce over a shape-dependent subset of axes
                       std::vector<int> axes;
                       for (int d = 0; d < x[0].rank(); ++d)
                         if ((x[0].dim(d) + d) % 2 == 0) axes.push_back(d);
                       if (axes.size() == static_cast<std::size_t>(x[0].rank())) axes.pop_back();
                       if (axes.empty()) axes.push_back(0);
                       return average ? mean(x[0], axes) : sum(x[0], axes);
                     }});
  };
  reduction("sum", false);
  reduction("mean", true);

  cases.push_back({"transpose",
                   [](Rng& rng) { return Inputs{random_tensor(random_shape(rng, 2, 3), rng)}; },
                   [](const Inputs& x) { return transpose(x[0], 0, -1); }});
  cases.push_back({"permute",
                   [](Rng& rng) { return Inputs{random_tensor(random_shape(rng, 3, 3), rng)}; },
                   [](const Inputs& x) { return permute(x[0], {2, 0, 1}); }});
  cases.push_back({"reshape",
                   [](Rng& rng) { return Inputs{random_tensor(random_shape(rng), rng)}; },
                   [](const Inputs& x) { return mul(reshape(x[0], {-1}), reshape(x[0], {-1})); }});
  cases.push_back({"slice",
                   [](Rng& rng) {
                     Shape s = random_shape(rng);
                     s[0] = 2 + static_cast<std::int64_t>(rng.below(3));
                     return Inputs{random_tensor(s, rng)};
                   },
                   [](const Inputs& x) { return slice(x[0], 0, 1, x[0].dim(0)); }});
  cases.push_back({"concat",
                   [](Rng& rng) {
                     Shape a = random_shape(rng, 2, 3);
                     Shape b = a;
                     b[1] = 1 + static_cast<std::int64_t>(rng.below(3));
                     return Inputs{random_tensor(a, rng), random_tensor(b, rng)};
                   },
                   [](const Inputs& x) { return concat(std::vector<Tensor64>{x[0], x[1]}, 1); }});
  cases.push_back({"embedding_select",
                   [](Rng& rng) {
                     return Inputs{random_tensor({2 + static_cast<std::int64_t>(rng.below(4)),
                                                  1 + static_cast<std::int64_t>(rng.below(4))},
                                                 rng)};
                   },
                   [](const Inputs& x) {
                     const std::int64_t V = x[0].dim(0);
                     return embedding_select(x[0], {V - 1, 0, V - 1, V / 2});
                   }});
  cases.push_back({"replace_rows",
                   [](Rng& rng) {
                     const std::int64_t R = 2 + rng.below(5), D = 1 + rng.below(4);
                     return Inputs{random_tensor({R, D}, rng), random_tensor({D}, rng)};
                   },
                   [](const Inputs& x) {
                     std::vector<std::uint8_t> m(static_cast<std::size_t>(x[0].dim(0)), 0);
                     for (std::size_t i = 0; i < m.size(); i += 2) m[i] = 1;
                     return apply_mask(x[0], m, x[1]);
                   }});
  cases.push_back({"cross_entropy",
                   [](Rng& rng) {
                     return Inputs{random_tensor({1 + static_cast<std::int64_t>(rng.below(4)),
                                                  2 + static_cast<std::int64_t>(rng.below(4))},
                                                 rng, -2.0, 2.0)};
                   },
                   [](const Inputs& x) {
                     std::vector<std::int64_t> labels;
                     for (std::int64_t b = 0; b < x[0].dim(0); ++b) labels.push_back(b % x[0].dim(1));
                     return cross_entropy(x[0], labels);
                   }});

  // masked l1 losses: pred and target differ by at least 0.05 everywhere
  auto loss = [&](std::string name, bool weighted) {
    cases.push_back({std::move(name),
                     [](Rng& rng) {
                       const std::int64_t B = 1 + rng.below(2), C = 1 + rng.below(3);
                       const std::int64_t side = 2 * (1 + rng.below(2));
                       const Shape s{B, C, side, side};
                       Tensor64 target = random_tensor(s, rng);
                       target.set_requires_grad(false);
                       Tensor64 diff = away_from_zero(s, rng, 0.05, 1.0);
                       Tensor64 pred = Tensor64::from_data(s, add(target, diff).values(), true);
                       Tensor64 w = random_tensor({B, side, side}, rng, 1.0, 3.0);
                       w.set_requires_grad(false);
                       return Inputs{pred, target, w};
                     },
                     [weighted](const Inputs& x) {
                       const std::int64_t B = x[0].dim(0), side = x[0].dim(2);
                       const std::int64_t N = (side / 2) * (side / 2);
                       std::vector<std::uint8_t> m(static_cast<std::size_t>(B * N), 0);
                       for (std::size_t i = 0; i < m.size(); i += 2) m[i] = 1;
                       return weighted ? loss_kamim(x[0], x[1], m, x[2], 2) : loss_simmim(x[0], x[1], m, 2);
                     }});
  };
  loss("loss_simmim", false);
  loss("loss_kamim", true);

  // a composite: one attention head
  cases.push_back({"attention",
                   [](Rng& rng) {
                     const std::int64_t N = 2 + rng.below(3), D = 1 + rng.below(4);
                     return Inputs{random_tensor({N, D}, rng), random_tensor({N, D}, rng), random_tensor({N, D}, rng)};
                   },
                   [](const Inputs& x) { return matmul(softmax(matmul(x[0], transpose(x[1])), -1), x[2]); }});
  return cases;
}

}  // namespace kamim::gradcheck
