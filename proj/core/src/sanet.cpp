#include "stict/sanet.hpp"

#include <cmath>

namespace stict {

const char* domain_name(Domain d) { return d == Domain::Labeled ? "labeled" : "unlabeled"; }

void ModelConfig::validate() const {
  for (int c : channels) {
    if (c <= 0) throw ValidationError("model channels must be positive");
  }
  if (refiner && !ffm) throw ValidationError("model config: the refiner requires FFM");
  if (dam && !refiner) throw ValidationError("model config: DAM requires the refiner");
}

ModelConfig ModelConfig::ed() {
  ModelConfig c;
  c.ffm = c.refiner = c.dam = false;
  return c;
}

ModelConfig ModelConfig::ed_ffm() {
  ModelConfig c;
  c.refiner = c.dam = false;
  return c;
}

ModelConfig ModelConfig::ed_ffm_refiner() {
  ModelConfig c;
  c.dam = false;
  return c;
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

// ---------------------------------------------------------------------------

template <typename T>
Conv<T>::Conv(std::string name, int cin, int cout, int k, int stride_, bool bias_, std::mt19937_64& rng)
    : has_bias(bias_), stride(stride_), padding(k / 2) {
  // He (fan-in) initialization.
  Tensor<T> w(Shape{cout, cin, k, k});
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (cin * k * k)));
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  weight = Parameter<T>(name + ".weight", std::move(w));
  if (has_bias) bias = Parameter<T>(name + ".bias", Tensor<T>(Shape{cout}));
}

template <typename T>
Var<T> Conv<T>::operator()(PassContext<T>& ctx, Var<T> x) {
  std::optional<Var<T>> b;
  if (has_bias) b = ctx.tape.parameter(bias);
  return conv2d(x, ctx.tape.parameter(weight), b, stride, padding);
}

template <typename T>
void Conv<T>::visit(const std::function<void(Parameter<T>&)>& f) {
  f(weight);
  if (has_bias) f(bias);
}

template <typename T>
Norm<T>::Norm(std::string name_, int channels)
    : gamma(name_ + ".gamma", Tensor<T>(Shape{channels}, T{1})),
      beta(name_ + ".beta", Tensor<T>(Shape{channels})),
      name(std::move(name_)) {
  for (auto& s : stats) {
    s.mean = Tensor<T>(Shape{channels});
    s.var = Tensor<T>(Shape{channels}, T{1});
  }
}

template <typename T>
Var<T> Norm<T>::operator()(PassContext<T>& ctx, Var<T> x) {
  Var<T> g = ctx.tape.parameter(gamma);
  Var<T> b = ctx.tape.parameter(beta);
  NormStats<T>& s = stats[static_cast<std::size_t>(ctx.domain)];
  const T eps = static_cast<T>(kEps);
  switch (ctx.mode) {
    case NormMode::Running:
      return batch_norm_fixed(x, g, b, s.mean, s.var, eps);
    case NormMode::BatchStats:
      return batch_norm_train(x, g, b, eps);
    case NormMode::Train: {
      Tensor<T> bm, bv;
      Var<T> y = batch_norm_train(x, g, b, eps, &bm, &bv);
      const Tensor<T>& xv = x.value();
      const double count = static_cast<double>(xv.dim(0)) * xv.dim(2) * xv.dim(3);
      const T unbias = static_cast<T>(count > 1 ? count / (count - 1) : 1.0);
      const T m = static_cast<T>(kMomentum);
      for (std::size_t c = 0; c < bm.size(); ++c) {
        s.mean[c] = (T{1} - m) * s.mean[c] + m * bm[c];
        s.var[c] = (T{1} - m) * s.var[c] + m * bv[c] * unbias;
      }
      ++s.updates;
      return y;
    }
  }
  return x;
}

template <typename T>
void Norm<T>::visit(const std::function<void(Parameter<T>&)>& f) {
  f(gamma);
  f(beta);
}

template <typename T>
Ffm<T>::Ffm(const std::string& name, int high_ch, int low_ch, std::mt19937_64& rng)
    : high_conv(name + ".high", high_ch, low_ch, 3, 1, false, rng),
      low_conv(name + ".low", low_ch, low_ch, 3, 1, false, rng),
      gate_conv(name + ".gate", low_ch, low_ch, 3, 1, true, rng) {}

template <typename T>
Var<T> Ffm<T>::operator()(PassContext<T>& ctx, Var<T> high, Var<T> low) {
  const Tensor<T>& hv = high.value();
  const Tensor<T>& lv = low.value();
  require_rank4(hv, "ffm high");
  require_rank4(lv, "ffm low");
  if (lv.dim(2) != 2 * hv.dim(2) || lv.dim(3) != 2 * hv.dim(3) || lv.dim(0) != hv.dim(0)) {
    throw ShapeError("ffm: low feature " + shape_string(lv.shape()) + " must be twice the extent of high " +
                     shape_string(hv.shape()));
  }
  Var<T> h = relu(high_conv(ctx, resize(high, lv.dim(2), lv.dim(3), ResampleMode::Bilinear)));
  Var<T> l = relu(low_conv(ctx, low));
  Var<T> a = sigmoid(gate_conv(ctx, add(h, l)));
  return add(add(mul(a, h), mul(a, l)), l);
}

template <typename T>
void Ffm<T>::visit(const std::function<void(Parameter<T>&)>& f) {
  high_conv.visit(f);
  low_conv.visit(f);
  gate_conv.visit(f);
}

template <typename T>
PlainFuse<T>::PlainFuse(const std::string& name, int high_ch, int low_ch, std::mt19937_64& rng)
    : proj(name + ".proj", high_ch, low_ch, 1, 1, false, rng), conv(name + ".conv", low_ch, low_ch, 3, 1, true, rng) {}

template <typename T>
Var<T> PlainFuse<T>::operator()(PassContext<T>& ctx, Var<T> high, Var<T> low) {
  const Tensor<T>& lv = low.value();
  if (lv.dim(2) != 2 * high.value().dim(2) || lv.dim(3) != 2 * high.value().dim(3)) {
    throw ShapeError("fuse: extent mismatch " + shape_string(high.value().shape()) + " vs " +
                     shape_string(lv.shape()));
  }
  Var<T> up = proj(ctx, resize(high, lv.dim(2), lv.dim(3), ResampleMode::Bilinear));
  return relu(conv(ctx, add(up, low)));
}

template <typename T>
void PlainFuse<T>::visit(const std::function<void(Parameter<T>&)>& f) {
  proj.visit(f);
  conv.visit(f);
}

template <typename T>
Dam<T>::Dam(const std::string& name, int highest_ch, int lowest_ch, std::mt19937_64& rng)
    : gate_conv(name + ".gate", highest_ch, lowest_ch, 1, 1, true, rng),
      detail_conv(name + ".detail", lowest_ch, lowest_ch, 3, 1, false, rng) {}

template <typename T>
Var<T> Dam<T>::operator()(PassContext<T>& ctx, Var<T> highest, Var<T> lowest) {
  const Tensor<T>& hv = highest.value();
  const Tensor<T>& lv = lowest.value();
  require_rank4(hv, "dam highest");
  require_rank4(lv, "dam lowest");
  if (hv.dim(0) != lv.dim(0) || lv.dim(2) % hv.dim(2) != 0 || lv.dim(3) % hv.dim(3) != 0 ||
      lv.dim(2) / hv.dim(2) != lv.dim(3) / hv.dim(3)) {
    throw ShapeError("dam: extent mismatch " + shape_string(hv.shape()) + " vs " + shape_string(lv.shape()));
  }
  Var<T> a = sigmoid(gate_conv(ctx, resize(highest, lv.dim(2), lv.dim(3), ResampleMode::Bilinear)));
  return add(mul(a, detail_conv(ctx, lowest)), lowest);
}

template <typename T>
void Dam<T>::visit(const std::function<void(Parameter<T>&)>& f) {
  gate_conv.visit(f);
  detail_conv.visit(f);
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> SaNet<T>::Head::operator()(PassContext<T>& ctx, Var<T> x, int out_h, int out_w) {
  return sigmoid(resize(conv(ctx, x), out_h, out_w, ResampleMode::Bilinear));
}

template <typename T>
Var<T> SaNet<T>::Block::operator()(PassContext<T>& ctx, Var<T> x) {
  return relu(norm(ctx, conv(ctx, x)));
}

template <typename T>
SaNet<T>::SaNet(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto& c = config_.channels;
  auto block = [&](const std::string& name, int cin, int cout, int stride) {
    return Block{Conv<T>(name + ".conv", cin, cout, 3, stride, false, rng), Norm<T>(name + ".norm", cout)};
  };
  auto head = [&](const std::string& name, int cin) { return Head{Conv<T>(name, cin, 1, 1, 1, true, rng)}; };

  int cin = 3;
  for (int i = 0; i < 4; ++i) {
    const std::string base = "enc" + std::to_string(i + 1);
    encoder_[static_cast<std::size_t>(i)][0] = block(base + ".a", cin, c[static_cast<std::size_t>(i)], 2);
    encoder_[static_cast<std::size_t>(i)][1] =
        block(base + ".b", c[static_cast<std::size_t>(i)], c[static_cast<std::size_t>(i)], 1);
    cin = c[static_cast<std::size_t>(i)];
  }
  for (int lvl = 3; lvl >= 1; --lvl) {
    const auto i = static_cast<std::size_t>(lvl - 1);
    const std::string name = "dec.fuse" + std::to_string(lvl);
    if (config_.ffm) {
      dec_ffm_[i] = Ffm<T>(name, c[i + 1], c[i], rng);
    } else {
      dec_plain_[i] = PlainFuse<T>(name, c[i + 1], c[i], rng);
    }
  }
  for (int lvl = 1; lvl <= 3; ++lvl) {
    dec_heads_[static_cast<std::size_t>(lvl - 1)] =
        head("dec.head" + std::to_string(lvl), c[static_cast<std::size_t>(lvl - 1)]);
  }
  dec_final_ = block("dec.final", c[0], c[0], 1);
  dec_head_ = head("dec.head", c[0]);

  if (config_.refiner) {
    if (config_.dam) dam_ = Dam<T>("ref.dam", c[3], c[0], rng);
    feedback_ = Conv<T>("ref.feedback", c[0], c[2], 1, 1, true, rng);
    ref_ffm_[1] = Ffm<T>("ref.fuse2", c[2], c[1], rng);
    ref_ffm_[0] = Ffm<T>("ref.fuse1", c[1], c[0], rng);
    ref_up_[0] = Conv<T>("ref.up2", c[0], c[1], 1, 1, true, rng);
    ref_up_[1] = Conv<T>("ref.up3", c[0], c[2], 1, 1, true, rng);
    for (int lvl = 1; lvl <= 3; ++lvl) {
      ref_heads_[static_cast<std::size_t>(lvl - 1)] =
          head("ref.head" + std::to_string(lvl), c[static_cast<std::size_t>(lvl - 1)]);
    }
    ref_final_ = block("ref.final", c[0], c[0], 1);
    ref_head_ = head("ref.head", c[0]);
  }
}

template <typename T>
void SaNet<T>::visit_blocks(const std::function<void(Block&)>& f) {
  for (auto& stage : encoder_) {
    for (auto& b : stage) f(b);
  }
  f(dec_final_);
  if (config_.refiner) f(ref_final_);
}

template <typename T>
std::vector<Parameter<T>*> SaNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  auto push = [&](Parameter<T>& p) { out.push_back(&p); };
  for (auto& stage : encoder_) {
    for (auto& b : stage) {
      b.conv.visit(push);
      b.norm.visit(push);
    }
  }
  for (int lvl = 3; lvl >= 1; --lvl) {
    const auto i = static_cast<std::size_t>(lvl - 1);
    if (config_.ffm) {
      dec_ffm_[i].visit(push);
    } else {
      dec_plain_[i].visit(push);
    }
  }
  for (auto& h : dec_heads_) h.conv.visit(push);
  dec_final_.conv.visit(push);
  dec_final_.norm.visit(push);
  dec_head_.conv.visit(push);
  if (config_.refiner) {
    if (config_.dam) dam_.visit(push);
    feedback_.visit(push);
    ref_ffm_[1].visit(push);
    ref_ffm_[0].visit(push);
    for (auto& u : ref_up_) u.visit(push);
    for (auto& h : ref_heads_) h.conv.visit(push);
    ref_final_.conv.visit(push);
    ref_final_.norm.visit(push);
    ref_head_.conv.visit(push);
  }
  return out;
}

template <typename T>
std::vector<Norm<T>*> SaNet<T>::norms() {
  std::vector<Norm<T>*> out;
  visit_blocks([&](Block& b) { out.push_back(&b.norm); });
  return out;
}

template <typename T>
FeaturePyramid<T> SaNet<T>::encode(PassContext<T>& ctx, const Tensor<T>& frame) {
  require_rank4(frame, "encode");
  if (frame.dim(1) != 3) throw ShapeError("encode: expected 3 input channels, got " + shape_string(frame.shape()));
  if (frame.dim(2) % 16 != 0 || frame.dim(3) % 16 != 0) {
    throw ShapeError("encode: frame extents must be divisible by 16, got " + shape_string(frame.shape()));
  }
  FeaturePyramid<T> pyr;
  Var<T> x = ctx.tape.constant(frame);
  for (std::size_t i = 0; i < 4; ++i) {
    x = encoder_[i][0](ctx, x);
    x = encoder_[i][1](ctx, x);
    pyr.levels[i] = x;
  }
  return pyr;
}

template <typename T>
Var<T> SaNet<T>::fuse(PassContext<T>& ctx, int level, Var<T> high, Var<T> low) {
  const auto i = static_cast<std::size_t>(level - 1);
  return config_.ffm ? dec_ffm_[i](ctx, high, low) : dec_plain_[i](ctx, high, low);
}

template <typename T>
ModelOutputs<T> SaNet<T>::decode_from_deep(PassContext<T>& ctx, Var<T> deep, const FeaturePyramid<T>& skips,
                                           int out_h, int out_w) {
  if (deep.value().shape() != skips.levels[3].value().shape()) {
    throw ShapeError("decode_from_deep: feature " + shape_string(deep.value().shape()) +
                     " does not match level-4 shape " + shape_string(skips.levels[3].value().shape()));
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor<T>& s = skips.levels[i].value();
    if (s.dim(2) != deep.value().dim(2) << (3 - i) || s.dim(3) != deep.value().dim(3) << (3 - i)) {
      throw ShapeError("decode_from_deep: skip level " + std::to_string(i + 1) + " has wrong extent " +
                       shape_string(s.shape()));
    }
  }
  ModelOutputs<T> out;
  out.deepest = deep;

  // Decoder: top-down aggregation 4 -> 1.
  std::array<Var<T>, 3> dec;
  Var<T> high = deep;
  for (int lvl = 3; lvl >= 1; --lvl) {
    high = fuse(ctx, lvl, high, skips.levels[static_cast<std::size_t>(lvl - 1)]);
    dec[static_cast<std::size_t>(lvl - 1)] = high;
  }
  for (std::size_t i = 0; i < 3; ++i) out.decoder_scales[i] = dec_heads_[i](ctx, dec[i], out_h, out_w);
  Var<T> prefinal = dec_final_(ctx, dec[0]);
  out.decoder = dec_head_(ctx, prefinal, out_h, out_w);

  if (!config_.refiner) {
    out.refiner_scales = out.decoder_scales;
    out.refiner = out.decoder;
    return out;
  }

  // Refiner: decoder feedback enters at level 3, DAM output at level 1.
  const Tensor<T>& l3 = skips.levels[2].value();
  Var<T> shallow = config_.dam ? dam_(ctx, deep, skips.levels[0]) : skips.levels[0];
  Var<T> fb = relu(feedback_(ctx, resize(prefinal, l3.dim(2), l3.dim(3), ResampleMode::Bilinear)));
  Var<T> r3 = add(skips.levels[2], fb);
  Var<T> r2 = ref_ffm_[1](ctx, r3, skips.levels[1]);
  Var<T> r1 = ref_ffm_[0](ctx, r2, shallow);

  // Bottom-up: the aggregated finest feature is fed back into each coarser level.
  const Tensor<T>& l2 = skips.levels[1].value();
  Var<T> b2 = add(r2, relu(ref_up_[0](ctx, resize(r1, l2.dim(2), l2.dim(3), ResampleMode::Bilinear))));
  Var<T> b3 = add(r3, relu(ref_up_[1](ctx, resize(r1, l3.dim(2), l3.dim(3), ResampleMode::Bilinear))));
  const std::array<Var<T>, 3> ref{r1, b2, b3};
  for (std::size_t i = 0; i < 3; ++i) out.refiner_scales[i] = ref_heads_[i](ctx, ref[i], out_h, out_w);
  out.refiner = ref_head_(ctx, ref_final_(ctx, r1), out_h, out_w);
  return out;
}

template <typename T>
ModelOutputs<T> SaNet<T>::forward(PassContext<T>& ctx, const Tensor<T>& frame) {
  FeaturePyramid<T> pyr = encode(ctx, frame);
  return decode_from_deep(ctx, pyr.levels[3], pyr, frame.dim(2), frame.dim(3));
}

template <typename T>
template <typename U>
SaNet<U> SaNet<T>::cast() const {
  SaNet<U> out(config_, 0);
  auto& self = const_cast<SaNet<T>&>(*this);
  auto src = self.parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i]->value = src[i]->value.template cast<U>();
    dst[i]->zero_grad();
  }
  auto sn = self.norms();
  auto dn = out.norms();
  for (std::size_t i = 0; i < sn.size(); ++i) {
    for (std::size_t d = 0; d < 2; ++d) {
      dn[i]->stats[d].mean = sn[i]->stats[d].mean.template cast<U>();
      dn[i]->stats[d].var = sn[i]->stats[d].var.template cast<U>();
      dn[i]->stats[d].updates = sn[i]->stats[d].updates;
    }
  }
  return out;
}

template class Conv<float>;
template class Conv<double>;
template class Norm<float>;
template class Norm<double>;
template class Ffm<float>;
template class Ffm<double>;
template class PlainFuse<float>;
template class PlainFuse<double>;
template class Dam<float>;
template class Dam<double>;
template class SaNet<float>;
template class SaNet<double>;
template SaNet<double> SaNet<float>::cast<double>() const;
template SaNet<float> SaNet<double>::cast<float>() const;
template SaNet<float> SaNet<float>::cast<float>() const;

}  // namespace stict
