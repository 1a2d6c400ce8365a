#include "stict/op_suite.hpp"

#include <memory>
#include <random>

#include "stict/ict.hpp"
#include "stict/losses.hpp"

namespace stict {
namespace {

using D = double;

Tensor<D> uniform(const Shape& s, D lo, D hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<D> u(lo, hi);
  Tensor<D> t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Tensor<D> binary(const Shape& s, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.4);
  Tensor<D> t(s);
  for (auto& v : t.data()) v = b(rng) ? 1.0 : 0.0;
  return t;
}

// sum(out * R) for a fixed random R, so every output element carries a distinct weight.
Var<D> project(Var<D> out, std::mt19937_64& rng) {
  Tape<D>& tape = *out.tape;
  std::mt19937_64 local(rng());
  return sum(mul(out, tape.constant(uniform(out.shape(), -1, 1, local))));
}

using Builder = std::function<Var<D>(Tape<D>&, std::vector<Parameter<D>>&)>;

struct Case {
  std::vector<Parameter<D>> params;
  Builder build;
  std::shared_ptr<void> owner{};        // keeps a module alive
  std::vector<Parameter<D>*> extra{};  // the module's own parameters
};

GradcheckReport run_case(Case c, std::uint64_t projection_seed, const GradcheckOptions& options) {
  std::vector<Parameter<D>*> ptrs;
  for (auto& p : c.params) ptrs.push_back(&p);
  ptrs.insert(ptrs.end(), c.extra.begin(), c.extra.end());
  auto& params = c.params;
  LossBuilder loss = [&](Tape<D>& tape) {
    std::mt19937_64 rng(projection_seed);
    return project(c.build(tape, params), rng);
  };
  return gradcheck(loss, ptrs, options);
}

OpCheck make(std::string name, std::function<Case(std::mt19937_64&)> setup) {
  return {name, [setup](std::uint64_t seed, const GradcheckOptions& options) {
            std::mt19937_64 rng(seed);
            Case c = setup(rng);
            return run_case(std::move(c), rng(), options);
          }};
}

Parameter<D> param(const std::string& name, Tensor<D> v) { return Parameter<D>(name, std::move(v)); }

std::vector<OpCheck> build_checks() {
  std::vector<OpCheck> checks;
  const Shape s4{2, 3, 4, 5};

  auto binary_case = [&](const char* name, BinaryKind kind, bool broadcast) {
    checks.push_back(make(name, [=](std::mt19937_64& rng) {
      Shape sb = s4;
      if (broadcast) sb[1] = 1;
      return Case{{param("a", uniform(s4, -1, 1, rng)), param("b", uniform(sb, -1, 1, rng))},
                  [kind](Tape<D>& t, auto& p) { return elementwise(kind, t.parameter(p[0]), t.parameter(p[1])); }};
    }));
  };
  binary_case("add", BinaryKind::Add, false);
  binary_case("sub", BinaryKind::Subtract, false);
  binary_case("mul", BinaryKind::Multiply, false);
  binary_case("add_broadcast", BinaryKind::Add, true);
  binary_case("sub_broadcast", BinaryKind::Subtract, true);
  binary_case("mul_broadcast", BinaryKind::Multiply, true);

  checks.push_back(make("add_scalar", [=](std::mt19937_64& rng) {
    return Case{{param("a", uniform(s4, -1, 1, rng))}, [](Tape<D>& t, auto& p) { return add(t.parameter(p[0]), 0.7); }};
  }));
  checks.push_back(make("mul_scalar", [=](std::mt19937_64& rng) {
    return Case{{param("a", uniform(s4, -1, 1, rng))}, [](Tape<D>& t, auto& p) { return mul(t.parameter(p[0]), -1.3); }};
  }));
  checks.push_back(make("rsub", [=](std::mt19937_64& rng) {
    return Case{{param("a", uniform(s4, -1, 1, rng))}, [](Tape<D>& t, auto& p) { return rsub(1.0, t.parameter(p[0])); }};
  }));
  checks.push_back(make("pow", [=](std::mt19937_64& rng) {
    return Case{{param("a", uniform(s4, 0.2, 2, rng))}, [](Tape<D>& t, auto& p) { return pow(t.parameter(p[0]), 2.5); }};
  }));
  auto unary_case = [&](const char* name, UnaryKind kind, D lo, D hi) {
    checks.push_back(make(name, [=](std::mt19937_64& rng) {
      return Case{{param("a", uniform(s4, lo, hi, rng))},
                  [kind](Tape<D>& t, auto& p) { return elementwise(kind, t.parameter(p[0])); }};
    }));
  };
  unary_case("sigmoid", UnaryKind::Sigmoid, -3, 3);
  unary_case("exp", UnaryKind::Exp, -2, 2);
  unary_case("log", UnaryKind::Log, 0.05, 0.95);
  unary_case("relu", UnaryKind::Relu, -1, 1);

  auto conv_case = [&](const char* name, int stride, int k, bool bias) {
    checks.push_back(make(name, [=](std::mt19937_64& rng) {
      std::vector<Parameter<D>> ps{param("x", uniform({2, 3, 6, 7}, -1, 1, rng)),
                                   param("w", uniform({4, 3, k, k}, -1, 1, rng))};
      if (bias) ps.push_back(param("b", uniform({4}, -1, 1, rng)));
      return Case{std::move(ps), [=](Tape<D>& t, auto& p) {
                    std::optional<Var<D>> b;
                    if (bias) b = t.parameter(p[2]);
                    return conv2d(t.parameter(p[0]), t.parameter(p[1]), b, stride, k / 2);
                  }};
    }));
  };
  conv_case("conv2d_3x3", 1, 3, true);
  conv_case("conv2d_3x3_stride2", 2, 3, false);
  conv_case("conv2d_1x1", 1, 1, true);

  auto resize_case = [&](const char* name, int oh, int ow, ResampleMode mode) {
    checks.push_back(make(name, [=](std::mt19937_64& rng) {
      return Case{{param("x", uniform({2, 2, 4, 6}, -1, 1, rng))},
                  [=](Tape<D>& t, auto& p) { return resize(t.parameter(p[0]), oh, ow, mode); }};
    }));
  };
  resize_case("resize_bilinear_up", 8, 12, ResampleMode::Bilinear);
  resize_case("resize_bilinear_down", 2, 3, ResampleMode::Bilinear);
  resize_case("resize_bilinear_odd", 5, 7, ResampleMode::Bilinear);
  resize_case("resize_nearest", 8, 9, ResampleMode::Nearest);
  checks.push_back(make("resample", [=](std::mt19937_64& rng) {
    return Case{{param("x", uniform({1, 2, 4, 6}, -1, 1, rng))}, [](Tape<D>& t, auto& p) {
                  return resample(t.parameter(p[0]), Rational{3, 2}, ResampleMode::Bilinear);
                }};
  }));

  auto reduce_case = [&](const char* name, ReduceKind kind, std::vector<int> axes) {
    checks.push_back(make(name, [=](std::mt19937_64& rng) {
      return Case{{param("x", uniform(s4, -1, 1, rng))},
                  [=](Tape<D>& t, auto& p) { return reduce(t.parameter(p[0]), kind, axes); }};
    }));
  };
  reduce_case("reduce_sum_all", ReduceKind::Sum, {});
  reduce_case("reduce_mean_all", ReduceKind::Mean, {});
  reduce_case("reduce_sum_spatial", ReduceKind::Sum, {2, 3});
  reduce_case("reduce_mean_batch_channel", ReduceKind::Mean, {0, 1});

  checks.push_back(make("gather_pixels", [=](std::mt19937_64& rng) {
    std::vector<int> src(2 * 4 * 5);
    std::uniform_int_distribution<int> u(0, 19);
    for (auto& v : src) v = u(rng);
    return Case{{param("x", uniform(s4, -1, 1, rng))},
                [src](Tape<D>& t, auto& p) { return gather_pixels(t.parameter(p[0]), src); }};
  }));
  checks.push_back(make("warp", [=](std::mt19937_64& rng) {
    Tensor<D> flow = uniform({2, 2, 5, 6}, -2.5, 2.5, rng);
    return Case{{param("x", uniform({2, 1, 5, 6}, -1, 1, rng))},
                [flow](Tape<D>& t, auto& p) { return warp(t.parameter(p[0]), flow); }};
  }));
  checks.push_back(make("batch_norm_train", [=](std::mt19937_64& rng) {
    return Case{{param("x", uniform({3, 2, 3, 3}, -1, 1, rng)), param("g", uniform({2}, 0.5, 1.5, rng)),
                 param("b", uniform({2}, -1, 1, rng))},
                [](Tape<D>& t, auto& p) {
                  return batch_norm_train(t.parameter(p[0]), t.parameter(p[1]), t.parameter(p[2]), 1e-5);
                }};
  }));
  checks.push_back(make("batch_norm_fixed", [=](std::mt19937_64& rng) {
    Tensor<D> m = uniform({2}, -0.5, 0.5, rng), v = uniform({2}, 0.5, 2, rng);
    return Case{{param("x", uniform({2, 2, 3, 3}, -1, 1, rng)), param("g", uniform({2}, 0.5, 1.5, rng)),
                 param("b", uniform({2}, -1, 1, rng))},
                [m, v](Tape<D>& t, auto& p) {
                  return batch_norm_fixed(t.parameter(p[0]), t.parameter(p[1]), t.parameter(p[2]), m, v, 1e-5);
                }};
  }));
  checks.push_back(make("mse", [=](std::mt19937_64& rng) {
    return Case{{param("a", uniform(s4, -1, 1, rng)), param("b", uniform(s4, -1, 1, rng))},
                [](Tape<D>& t, auto& p) { return mse(t.parameter(p[0]), t.parameter(p[1])); }};
  }));

  checks.push_back(make("lcs_shuffle_mix", [=](std::mt19937_64& rng) {
    Tensor<D> feat = uniform({2, 4, 5, 5}, -1, 1, rng);
    const MixPlan plan = lcs_plan(feat, 3, rng);
    const Tensor<D> lam = plan.lambda_map<D>();
    return Case{{param("f", feat)}, [plan, lam](Tape<D>& t, auto& p) {
                  Var<D> f = t.parameter(p[0]);
                  return mix(f, apply_shuffle(f, plan), lam);
                }};
  }));
  checks.push_back(make("ppa_loss", [=](std::mt19937_64& rng) {
    const Tensor<D> gt = binary({2, 1, 6, 6}, rng);
    return Case{{param("p", uniform({2, 1, 6, 6}, 0.05, 0.95, rng))},
                [gt](Tape<D>& t, auto& p) { return ppa_loss(t.parameter(p[0]), gt, PpaOptions{3, 5.0}); }};
  }));
  checks.push_back(make("sic_loss", [=](std::mt19937_64& rng) {
    const Tensor<D> a = uniform({2, 1, 8, 8}, 0, 1, rng), b = uniform({2, 1, 8, 8}, 0, 1, rng);
    const Tensor<D> lam = uniform({2, 1, 2, 2}, 0, 1, rng);
    return Case{{param("s", uniform({2, 1, 8, 8}, 0, 1, rng))},
                [=](Tape<D>& t, auto& p) { return sic_loss(t.parameter(p[0]), a, b, lam); }};
  }));
  checks.push_back(make("tic_loss", [=](std::mt19937_64& rng) {
    const Tensor<D> target = uniform({2, 1, 6, 6}, 0, 1, rng);
    return Case{{param("s", uniform({2, 1, 6, 6}, 0, 1, rng))},
                [=](Tape<D>& t, auto& p) { return tic_loss(t.parameter(p[0]), target); }};
  }));
  checks.push_back(make("sc_loss", [=](std::mt19937_64& rng) {
    std::array<Tensor<D>, 3> teacher{uniform({2, 1, 6, 6}, 0, 1, rng), uniform({2, 1, 6, 6}, 0, 1, rng),
                                     uniform({2, 1, 6, 6}, 0, 1, rng)};
    return Case{{param("s1", uniform({2, 1, 6, 6}, 0, 1, rng)), param("s2", uniform({2, 1, 6, 6}, 0, 1, rng)),
                 param("s3", uniform({2, 1, 6, 6}, 0, 1, rng))},
                [=](Tape<D>& t, auto& p) {
                  return sc_loss(std::array<Var<D>, 3>{t.parameter(p[0]), t.parameter(p[1]), t.parameter(p[2])},
                                 teacher);
                }};
  }));
  checks.push_back(make("weighted_supervised_sum", [=](std::mt19937_64& rng) {
    std::vector<Parameter<D>> ps;
    for (int i = 0; i < 8; ++i) ps.push_back(param("l" + std::to_string(i), uniform({}, 0, 2, rng)));
    return Case{std::move(ps), [](Tape<D>& t, auto& p) {
                  return weighted_supervised_sum(
                      std::array<Var<D>, 3>{t.parameter(p[0]), t.parameter(p[1]), t.parameter(p[2])}, t.parameter(p[3]),
                      std::array<Var<D>, 3>{t.parameter(p[4]), t.parameter(p[5]), t.parameter(p[6])},
                      t.parameter(p[7]));
                }};
  }));

  // Modules: inputs and every module weight are checked.
  auto module_case = [&](const char* name, auto factory, Shape high, Shape low) {
    checks.push_back(make(name, [=](std::mt19937_64& rng) {
      auto mod = factory(rng);
      Case c{{param("high", uniform(high, -1, 1, rng)), param("low", uniform(low, -1, 1, rng))},
             [mod](Tape<D>& t, auto& p) {
               PassContext<D> ctx{t, Domain::Labeled, NormMode::Train};
               return (*mod)(ctx, t.parameter(p[0]), t.parameter(p[1]));
             },
             mod};
      mod->visit([&](Parameter<D>& q) { c.extra.push_back(&q); });
      return c;
    }));
  };
  module_case("ffm", [](std::mt19937_64& rng) { return std::make_shared<Ffm<D>>("ffm", 3, 2, rng); },
              Shape{2, 3, 3, 3}, Shape{2, 2, 6, 6});
  module_case("plain_fuse", [](std::mt19937_64& rng) { return std::make_shared<PlainFuse<D>>("fuse", 3, 2, rng); },
              Shape{2, 3, 3, 3}, Shape{2, 2, 6, 6});
  module_case("dam", [](std::mt19937_64& rng) { return std::make_shared<Dam<D>>("dam", 3, 2, rng); },
              Shape{2, 3, 2, 2}, Shape{2, 2, 8, 8});
  return checks;
}

}  // namespace

const std::vector<OpCheck>& op_checks() {
  static const std::vector<OpCheck> checks = build_checks();
  return checks;
}

GradcheckOptions model_check_defaults() {
  GradcheckOptions o;
  o.step = kModelCheckStep;
  return o;
}

GradcheckReport model_gradcheck(std::uint64_t seed, const GradcheckOptions& options, const ModelCheckOptions& mc) {
  std::mt19937_64 rng(seed);
  SaNet<D> net(mc.model, rng());
  const Tensor<D> x = uniform({mc.batch, 3, mc.size, mc.size}, 0, 1, rng);
  const Tensor<D> gt = binary({mc.batch, 1, mc.size, mc.size}, rng);
  const PpaOptions ppa{7, 5.0};
  LossBuilder loss = [&](Tape<D>& tape) {
    PassContext<D> ctx{tape, Domain::Labeled, NormMode::BatchStats};
    return supervised_loss(net.forward(ctx, x), gt, ppa);
  };
  const auto params = net.parameters();
  return gradcheck(loss, params, options);
}

}  // namespace stict
