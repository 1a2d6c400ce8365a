#include <doctest.h>

#include <set>

#include "stict/losses.hpp"
#include "stict/sanet.hpp"
#include "support.hpp"

using namespace stict;

namespace {

const ModelConfig kSmall{{4, 6, 8, 10}, true, true, true};

std::vector<Tensor<float>> maps(const ModelOutputs<float>& o) {
  std::vector<Tensor<float>> out;
  for (const auto& v : o.decoder_scales) out.push_back(v.value());
  out.push_back(o.decoder.value());
  for (const auto& v : o.refiner_scales) out.push_back(v.value());
  out.push_back(o.refiner.value());
  return out;
}

}  // namespace

TEST_CASE("eight maps at input resolution with probabilities in (0, 1)") {
  SaNet<float> net(ModelConfig{}, 3);
  std::mt19937_64 rng(1);
  const auto frame = test::random_tensor<float>({2, 3, 32, 48}, rng, 0, 1);
  Tape<float> tape(false);
  PassContext<float> ctx{tape, Domain::Labeled, NormMode::BatchStats};
  const auto out = net.forward(ctx, frame);
  const auto all = maps(out);
  REQUIRE(all.size() == 8);
  for (const auto& m : all) {
    CHECK(m.shape() == Shape{2, 1, 32, 48});
    for (float v : m.data()) CHECK((v > 0.f && v < 1.f));
  }
  CHECK(out.deepest.value().shape() == Shape{2, 128, 2, 3});
}

TEST_CASE("input validation") {
  SaNet<float> net(kSmall, 3);
  Tape<float> tape(false);
  PassContext<float> ctx{tape, Domain::Labeled, NormMode::BatchStats};
  CHECK_THROWS_AS(net.forward(ctx, Tensor<float>(Shape{1, 3, 30, 32})), ShapeError);
  CHECK_THROWS_AS(net.forward(ctx, Tensor<float>(Shape{1, 1, 32, 32})), ShapeError);
  CHECK_THROWS_AS((ModelConfig{{4, 4, 4, 4}, false, true, false}.validate()), ValidationError);
  CHECK_THROWS_AS((ModelConfig{{4, 4, 4, 4}, true, false, true}.validate()), ValidationError);
  CHECK_THROWS_AS((ModelConfig{{4, 0, 4, 4}, true, true, true}.validate()), ValidationError);
}

TEST_CASE("ablation toggles add parameters cumulatively; names are unique") {
  std::size_t previous = 0;
  for (ModelConfig cfg : {ModelConfig::ed(), ModelConfig::ed_ffm(), ModelConfig::ed_ffm_refiner(), ModelConfig::full()}) {
    SaNet<float> net(cfg, 1);
    std::size_t count = 0;
    std::set<std::string> names;
    for (auto* p : net.parameters()) {
      count += p->value.size();
      names.insert(p->name);
    }
    CHECK(names.size() == net.parameters().size());
    CHECK(count > previous);
    previous = count;
  }
}

TEST_CASE("refiner off: refiner maps are the decoder maps") {
  SaNet<float> net(ModelConfig{{4, 6, 8, 10}, true, false, false}, 2);
  Tape<float> tape(false);
  PassContext<float> ctx{tape, Domain::Labeled, NormMode::BatchStats};
  const auto out = net.forward(ctx, Tensor<float>(Shape{1, 3, 16, 16}, 0.5f));
  CHECK(out.refiner.id == out.decoder.id);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out.refiner_scales[i].id == out.decoder_scales[i].id);
}

TEST_CASE("initialization is a function of the seed") {
  SaNet<float> a(kSmall, 9), b(kSmall, 9), c(kSmall, 10);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->value.bitwise_equal(pb[i]->value));
    any_diff = any_diff || !pa[i]->value.bitwise_equal(pc[i]->value);
  }
  CHECK(any_diff);
}

TEST_CASE("normalization modes touch only the selected domain's statistics") {
  SaNet<float> net(kSmall, 4);
  std::mt19937_64 rng(2);
  const auto frame = test::random_tensor<float>({2, 3, 16, 16}, rng, 0, 1);
  auto snapshot = [&] {
    std::vector<Tensor<float>> s;
    for (auto* n : net.norms())
      for (auto& st : n->stats) {
        s.push_back(st.mean);
        s.push_back(st.var);
      }
    return s;
  };
  auto same = [](const std::vector<Tensor<float>>& x, const std::vector<Tensor<float>>& y, std::size_t domain) {
    bool eq = true;
    for (std::size_t i = 0; i < x.size(); ++i)
      if ((i / 2) % 2 == domain) eq = eq && x[i].bitwise_equal(y[i]);
    return eq;
  };
  const auto before = snapshot();
  {
    Tape<float> tape;
    PassContext<float> ctx{tape, Domain::Unlabeled, NormMode::BatchStats};
    net.forward(ctx, frame);
    Tape<float> tape2(false);
    PassContext<float> run{tape2, Domain::Labeled, NormMode::Running};
    net.forward(run, frame);
  }
  CHECK(same(before, snapshot(), 0));
  CHECK(same(before, snapshot(), 1));
  {
    Tape<float> tape;
    PassContext<float> ctx{tape, Domain::Labeled, NormMode::Train};
    net.forward(ctx, frame);
  }
  const auto after = snapshot();
  CHECK_FALSE(same(before, after, 0));
  CHECK(same(before, after, 1));
  for (auto* n : net.norms()) {
    CHECK(n->stats[0].updates == 1);
    CHECK(n->stats[1].updates == 0);
  }
}

TEST_CASE("running-statistics inference treats frames independently") {
  SaNet<float> net(kSmall, 5);
  std::mt19937_64 rng(3);
  const auto batch = test::random_tensor<float>({2, 3, 16, 16}, rng, 0, 1);
  {
    Tape<float> tape;
    PassContext<float> ctx{tape, Domain::Labeled, NormMode::Train};
    net.forward(ctx, batch);
  }
  Tape<float> tape(false);
  PassContext<float> run{tape, Domain::Labeled, NormMode::Running};
  const auto both = net.forward(run, batch).refiner.value();
  Tensor<float> first(Shape{1, 3, 16, 16});
  std::copy_n(batch.data().begin(), first.size(), first.data().begin());
  const auto alone = net.forward(run, first).refiner.value();
  for (std::size_t i = 0; i < alone.size(); ++i) CHECK(alone[i] == doctest::Approx(both[i]).epsilon(1e-5));
}

TEST_CASE("double-precision copy computes the same forward pass") {
  SaNet<float> net(kSmall, 6);
  SaNet<double> twin = net.cast<double>();
  std::mt19937_64 rng(4);
  const auto frame = test::random_tensor<float>({1, 3, 16, 16}, rng, 0, 1);
  Tape<float> tf(false);
  Tape<double> td(false);
  PassContext<float> cf{tf, Domain::Labeled, NormMode::BatchStats};
  PassContext<double> cd{td, Domain::Labeled, NormMode::BatchStats};
  const auto a = net.forward(cf, frame).refiner.value();
  const auto b = twin.forward(cd, frame.cast<double>()).refiner.value();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-4));
}

TEST_CASE("supervised loss drives gradients into every student parameter") {
  SaNet<float> net(kSmall, 7);
  std::mt19937_64 rng(5);
  const auto frame = test::random_tensor<float>({2, 3, 16, 16}, rng, 0, 1);
  const auto gt = test::random_mask<float>({2, 1, 16, 16}, rng);
  Tape<float> tape;
  PassContext<float> ctx{tape, Domain::Labeled, NormMode::Train};
  tape.backward(supervised_loss(net.forward(ctx, frame), gt, PpaOptions{7, 5.0}));
  for (auto* p : net.parameters()) {
    double norm = 0;
    for (float g : p->grad.data()) norm += std::abs(g);
    INFO(p->name);
    CHECK(norm > 0);
  }
}
