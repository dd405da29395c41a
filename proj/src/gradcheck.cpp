#include "topodelin/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

namespace topodelin {

bool GradcheckReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

const GradcheckResult& GradcheckReport::worst() const {
  if (checks.empty()) throw std::logic_error("gradcheck report is empty");
  return *std::max_element(checks.begin(), checks.end(),
                           [](const auto& a, const auto& b) { return a.error < b.error; });
}

std::string GradcheckReport::text() const {
  std::string out;
  char buf[256];
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof buf, "%-28s %5zu coords  rel.err %.3e  %s\n", c.name.c_str(), c.coordinates, c.error,
                  c.passed ? "ok" : "FAIL");
    out += buf;
  }
  const auto& w = worst();
  std::snprintf(buf, sizeof buf, "worst relative error %.3e (%s), tolerance %.1e: %s\n", w.error, w.name.c_str(),
                tolerance, passed() ? "PASS" : "FAIL");
  out += buf;
  return out;
}

namespace {

template <typename T>
using Builder = std::function<Var<T>(Graph<T>&, const std::vector<Var<T>>&)>;

template <typename T>
struct Arg {
  Tensor<T> value;
  bool probe = true;
  /// Coordinates probed; 0 probes all of them.
  std::size_t max_coords = 0;
};

template <typename T>
class Checker {
 public:
  Checker(std::uint64_t seed, double step, double tolerance) : rng_(seed), step_(step), tolerance_(tolerance) {}

  std::mt19937_64& rng() { return rng_; }

  Tensor<T> normal(const Shape& shape, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(d(rng_));
    return t;
  }

  Tensor<T> uniform(const Shape& shape, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(d(rng_));
    return t;
  }

  /// Values with magnitude in [margin, 1] and random sign, away from kinks at 0.
  Tensor<T> away_from_zero(const Shape& shape, double margin) {
    auto t = uniform(shape, margin, 1.0);
    std::bernoulli_distribution flip(0.5);
    for (auto& v : t.data())
      if (flip(rng_)) v = -v;
    return t;
  }

  Tensor<T> binary(const Shape& shape) {
    std::bernoulli_distribution d(0.3);
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = d(rng_) ? T{1} : T{0};
    return t;
  }

  GradcheckResult check(const std::string& name, std::vector<Arg<T>> args, const Builder<T>& f) {
    // Random projection turns any output into a scalar.
    Tensor<T> weights;
    {
      Graph<T> g;
      std::vector<Var<T>> vars;
      for (const auto& a : args) vars.push_back(g.constant(a.value));
      const auto out = f(g, vars);
      weights = out.value().size() == 1 ? Tensor<T>(out.shape(), T{1}) : normal(out.shape());
    }
    const auto scalar = [&](Graph<T>& g, const std::vector<Var<T>>& vars) {
      return sum(mul(f(g, vars), g.constant(weights)));
    };

    std::vector<Tensor<T>> analytic;
    {
      Graph<T> g;
      std::vector<Var<T>> vars;
      for (const auto& a : args) vars.push_back(a.probe ? g.input(a.value) : g.constant(a.value));
      g.backward(scalar(g, vars));
      for (std::size_t i = 0; i < args.size(); ++i) analytic.push_back(args[i].probe ? g.grad(vars[i]) : Tensor<T>{});
    }

    const auto evaluate = [&](const std::vector<Arg<T>>& current) {
      Graph<T> g;
      std::vector<Var<T>> vars;
      for (const auto& a : current) vars.push_back(g.constant(a.value));
      return static_cast<double>(scalar(g, vars).value()[0]);
    };

    double diff2 = 0, a2 = 0, n2 = 0;
    std::size_t probed = 0;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (!args[i].probe) continue;
      std::vector<std::size_t> coords(args[i].value.size());
      for (std::size_t c = 0; c < coords.size(); ++c) coords[c] = c;
      if (args[i].max_coords && coords.size() > args[i].max_coords) {
        std::shuffle(coords.begin(), coords.end(), rng_);
        coords.resize(args[i].max_coords);
        std::sort(coords.begin(), coords.end());
      }
      for (auto c : coords) {
        auto perturbed = args;
        const T x = args[i].value[c];
        perturbed[i].value[c] = static_cast<T>(x + step_);
        const double up = evaluate(perturbed);
        perturbed[i].value[c] = static_cast<T>(x - step_);
        const double down = evaluate(perturbed);
        const double h = static_cast<double>(static_cast<T>(x + step_)) - static_cast<double>(static_cast<T>(x - step_));
        const double numeric = (up - down) / h;
        const double a = static_cast<double>(analytic[i][c]);
        diff2 += (a - numeric) * (a - numeric);
        a2 += a * a;
        n2 += numeric * numeric;
        ++probed;
      }
    }
    const double scale = std::sqrt(std::max(a2, n2));
    const double error = scale < 1e-12 ? std::sqrt(diff2) : std::sqrt(diff2) / scale;
    return {name, error, probed, error <= tolerance_};
  }

 private:
  std::mt19937_64 rng_;
  double step_;
  double tolerance_;
};

// Thin random strokes on a 16x16 canvas, as a binary (1, 1, 16, 16) tensor.
template <typename T>
Tensor<T> stroke_gt(Checker<T>& ck) {
  Tensor<T> t(Shape{1, 1, 16, 16});
  std::uniform_int_distribution<int> pos(2, 13);
  const int row = pos(ck.rng()), col = pos(ck.rng());
  for (int x = 1; x < 15; ++x) t[static_cast<std::size_t>(row * 16 + x)] = T{1};
  for (int y = 1; y < 15; ++y) t[static_cast<std::size_t>(y * 16 + col)] = T{1};
  return t;
}

template <typename T>
std::vector<GradcheckResult> run_all(std::uint64_t seed, double step, double tolerance) {
  Checker<T> ck(seed, step, tolerance);
  std::vector<GradcheckResult> out;
  const auto add_check = [&](const std::string& name, std::vector<Arg<T>> args, const Builder<T>& f) {
    out.push_back(ck.check(name, std::move(args), f));
  };

  add_check("conv2d (3x3, pad 1)", {{ck.normal({2, 2, 6, 5})}, {ck.normal({3, 2, 3, 3})}},
            [](Graph<T>&, const auto& v) { return conv2d(v[0], v[1], 1, 1); });
  add_check("conv2d (3x3, stride 2)", {{ck.normal({1, 2, 7, 7})}, {ck.normal({2, 2, 3, 3})}},
            [](Graph<T>&, const auto& v) { return conv2d(v[0], v[1], 2, 0); });
  add_check("conv2d (1x1)", {{ck.normal({2, 3, 5, 5})}, {ck.normal({4, 3, 1, 1})}},
            [](Graph<T>&, const auto& v) { return conv2d(v[0], v[1]); });
  add_check("transpose_conv2d (2x2, s2)", {{ck.normal({2, 3, 4, 4})}, {ck.normal({3, 2, 2, 2})}},
            [](Graph<T>&, const auto& v) { return transpose_conv2d(v[0], v[1], 2); });
  add_check("transpose_conv2d (3x3, s1)", {{ck.normal({1, 2, 4, 5})}, {ck.normal({2, 3, 3, 3})}},
            [](Graph<T>&, const auto& v) { return transpose_conv2d(v[0], v[1], 1); });
  add_check("bias_add", {{ck.normal({2, 3, 4, 4})}, {ck.normal({3})}},
            [](Graph<T>&, const auto& v) { return bias_add(v[0], v[1]); });
  add_check("relu", {{ck.away_from_zero({2, 2, 5, 5}, 0.05)}},
            [](Graph<T>&, const auto& v) { return relu(v[0]); });
  add_check("sigmoid", {{ck.normal({2, 2, 5, 5}, 2.0)}}, [](Graph<T>&, const auto& v) { return sigmoid(v[0]); });
  add_check("log", {{ck.uniform({2, 2, 5, 5}, 0.2, 2.0)}}, [](Graph<T>&, const auto& v) { return log(v[0]); });
  {
    // Values at distance >= 0.05 from the clamp bounds.
    auto x = ck.away_from_zero({2, 2, 5, 5}, 0.05);
    for (auto& e : x.data()) e = e > 0 ? (e < T(0.55) ? e - T(0.5) : e) : (e > T(-0.55) ? e + T(0.5) : e);
    add_check("clamp", {{x}}, [](Graph<T>&, const auto& v) { return clamp(v[0], T(-0.5), T(0.5)); });
  }
  add_check("affine", {{ck.normal({2, 2, 5, 5})}},
            [](Graph<T>&, const auto& v) { return affine(v[0], T(2.5), T(-0.3)); });
  add_check("maxpool2x2", {{ck.normal({2, 2, 6, 6})}}, [](Graph<T>&, const auto& v) { return maxpool2x2(v[0]); });
  add_check("pad_replicate", {{ck.normal({1, 2, 5, 4})}},
            [](Graph<T>&, const auto& v) { return pad_replicate(v[0], 2); });
  add_check("concat_channels", {{ck.normal({2, 1, 4, 4})}, {ck.normal({2, 2, 4, 4})}},
            [](Graph<T>&, const auto& v) { return concat_channels(v[0], v[1]); });
  add_check("batchnorm", {{ck.normal({3, 2, 4, 4})}, {ck.normal({2})}, {ck.normal({2})}},
            [](Graph<T>&, const auto& v) { return batchnorm(v[0], v[1], v[2]); });
  add_check("add", {{ck.normal({2, 3, 3})}, {ck.normal({2, 3, 3})}},
            [](Graph<T>&, const auto& v) { return add(v[0], v[1]); });
  add_check("sub", {{ck.normal({2, 3, 3})}, {ck.normal({2, 3, 3})}},
            [](Graph<T>&, const auto& v) { return sub(v[0], v[1]); });
  add_check("mul", {{ck.normal({2, 3, 3})}, {ck.normal({2, 3, 3})}},
            [](Graph<T>&, const auto& v) { return mul(v[0], v[1]); });
  add_check("sum", {{ck.normal({2, 3, 3})}}, [](Graph<T>&, const auto& v) { return sum(v[0]); });
  add_check("sum_sorted", {{ck.normal({2, 3, 3})}}, [](Graph<T>&, const auto& v) { return sum_sorted(v[0]); });
  add_check("mean", {{ck.normal({2, 3, 3})}}, [](Graph<T>&, const auto& v) { return mean(v[0]); });
  add_check("squared_l2", {{ck.normal({2, 3, 3})}}, [](Graph<T>&, const auto& v) { return squared_l2(v[0]); });
  add_check("weighted_sum", {{ck.normal({1})}, {ck.normal({1})}, {ck.normal({1})}},
            [](Graph<T>&, const auto& v) { return weighted_sum<T>({v[0], v[1], v[2]}, {T(0.5), T(-2), T(3)}); });

  // Network: every parameter tensor plus both inputs, a few coordinates each.
  UNetConfig net;
  net.depth = 2;
  net.base_channels = 4;
  const auto params = init_params<T>(net, seed);
  const auto layout = parameter_layout(net);
  const auto unet_args = [&](std::size_t coords) {
    std::vector<Arg<T>> args;
    for (const auto& [name, shape] : layout) args.push_back({params.tensors.at(name), true, coords});
    return args;
  };
  const auto bind = [&](const std::vector<Var<T>>& v) {
    std::map<std::string, Var<T>> bound;
    for (std::size_t i = 0; i < layout.size(); ++i) bound.emplace(layout[i].first, v[i]);
    return bound;
  };
  {
    auto args = unet_args(4);
    args.push_back({ck.uniform({2, 1, 16, 16}, 0, 1), true, 16});
    args.push_back({ck.uniform({2, 1, 16, 16}, 0, 1), true, 16});
    add_check("unet_forward", args, [&](Graph<T>&, const auto& v) {
      return unet_forward(net, bind(v), v[layout.size()], v[layout.size() + 1]);
    });
  }

  const Extractor bank = Extractor::analytic();
  LossConfig mean_cfg;
  LossConfig sum_cfg;
  sum_cfg.reduction = Reduction::sum;
  LossConfig norm_cfg;
  norm_cfg.normalize_layers = true;
  const auto pred_shape = Shape{1, 1, 16, 16};

  add_check("bce (mean)", {{ck.uniform({2, 1, 8, 8}, 0.05, 0.95)}, {ck.binary({2, 1, 8, 8}), false}},
            [&](Graph<T>&, const auto& v) { return bce_loss(v[0], v[1], mean_cfg); });
  add_check("bce (sum)", {{ck.uniform({2, 1, 8, 8}, 0.05, 0.95)}, {ck.binary({2, 1, 8, 8}), false}},
            [&](Graph<T>&, const auto& v) { return bce_loss(v[0], v[1], sum_cfg); });
  add_check("topo (mean)", {{ck.uniform(pred_shape, 0.05, 0.95)}, {stroke_gt(ck), false}},
            [&](Graph<T>&, const auto& v) { return topo_loss(v[0], v[1], bank, mean_cfg); });
  add_check("topo (layer-normalized)", {{ck.uniform(pred_shape, 0.05, 0.95)}, {stroke_gt(ck), false}},
            [&](Graph<T>&, const auto& v) { return topo_loss(v[0], v[1], bank, norm_cfg); });
  add_check("combined (mu 0.1)", {{ck.uniform(pred_shape, 0.05, 0.95)}, {stroke_gt(ck), false}},
            [&](Graph<T>&, const auto& v) { return combined_loss(v[0], v[1], bank, mean_cfg).total; });
  add_check("refinement (K 3)",
            {{ck.uniform(pred_shape, 0.05, 0.95)},
             {ck.uniform(pred_shape, 0.05, 0.95)},
             {ck.uniform(pred_shape, 0.05, 0.95)},
             {stroke_gt(ck), false}},
            [&](Graph<T>&, const auto& v) {
              std::vector<Var<T>> partials;
              const auto target = make_target(v[3], bank, mean_cfg);
              for (std::size_t k = 0; k < 3; ++k) {
                partials.push_back(combined_loss(v[k], target, bank, mean_cfg, k + 1).total);
              }
              return refinement_loss(partials);
            });
  {
    // Shared weights through a K = 2 chain, gradients summed over both passes.
    auto args = unet_args(3);
    args.push_back({ck.uniform(pred_shape, 0, 1), false});
    args.push_back({stroke_gt(ck), false});
    add_check("refinement chain (unet, K 2)", args, [&](Graph<T>& g, const auto& v) {
      const auto bound = bind(v);
      const auto image = v[layout.size()];
      const auto target = make_target(v[layout.size() + 1], bank, mean_cfg);
      auto previous = g.constant(empty_prediction<T>(pred_shape));
      std::vector<Var<T>> partials;
      for (std::size_t k = 1; k <= 2; ++k) {
        previous = unet_forward(net, bound, image, previous);
        partials.push_back(combined_loss(previous, target, bank, mean_cfg, k).total);
      }
      return refinement_loss(partials);
    });
  }
  return out;
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, Precision precision, double tolerance) {
  GradcheckReport report;
  report.tolerance = tolerance;
  report.checks = precision == Precision::double_ ? run_all<double>(seed, 1e-6, tolerance)
                                                  : run_all<float>(seed, 1e-3, tolerance);
  return report;
}

}  // namespace topodelin
