#include "stict/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

namespace stict {

void TrainConfig::validate() const {
  if (!(ema_decay >= 0 && ema_decay < 1)) throw ValidationError("ema_decay must lie in [0, 1)");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be positive");
  if (epochs <= 0) throw ValidationError("epochs must be positive");
  if (labeled_batch <= 0 || unlabeled_batch <= 0) throw ValidationError("batch sizes must be positive");
  if (k < 1) throw ValidationError("k must be at least 1");
  if (!(lambda_t >= 0 && lambda_t <= 1)) throw ValidationError("lambda_t must lie in [0, 1]");
  if (window < 3 || window % 2 == 0) throw ValidationError("window must be odd and at least 3");
  if (ppa_window < 1 || ppa_window % 2 == 0) throw ValidationError("ppa_window must be odd and positive");
  if (!(ppa_factor >= 0)) throw ValidationError("ppa_factor must be non-negative");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) || !(adam_eps > 0)) {
    throw ValidationError("Adam coefficients out of range");
  }
  weights.validate();
  model.validate();
}

TrainerState::TrainerState(const TrainConfig& config)
    : student(config.model, config.seed), teacher(student), rng(config.seed ^ 0x5bd1e9955bd1e995ull) {
  config.validate();
  for (auto* p : student.parameters()) {
    adam.m.emplace_back(p->value.shape());
    adam.v.emplace_back(p->value.shape());
  }
}

template <typename T>
void ema_update(SaNet<T>& teacher, SaNet<T>& student, double eta) {
  if (!(eta >= 0 && eta <= 1)) throw ValidationError("EMA decay must lie in [0, 1]");
  auto tp = teacher.parameters();
  auto sp = student.parameters();
  if (tp.size() != sp.size()) throw ShapeError("teacher and student differ in parameter count");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    auto dst = tp[i]->value.data();
    auto src = sp[i]->value.data();
    if (tp[i]->value.shape() != sp[i]->value.shape()) throw ShapeError("teacher/student shape mismatch at " + tp[i]->name);
    for (std::size_t j = 0; j < dst.size(); ++j) {
      dst[j] = static_cast<T>(eta * dst[j] + (1.0 - eta) * src[j]);
    }
  }
  auto tn = teacher.norms();
  auto sn = student.norms();
  for (std::size_t i = 0; i < tn.size(); ++i) tn[i]->stats = sn[i]->stats;
}

template void ema_update(SaNet<float>&, SaNet<float>&, double);
template void ema_update(SaNet<double>&, SaNet<double>&, double);

void ema_update(TrainerState& state, double eta) { ema_update(state.teacher, state.student, eta); }

double learning_rate(const TrainConfig& config, int epoch) {
  return config.learning_rate * (1.0 - static_cast<double>(epoch) / config.epochs);
}

void adam_step(TrainerState& state, const TrainConfig& config, double lr) {
  auto params = state.student.parameters();
  const double t = static_cast<double>(state.step + 1);
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (p.grad.shape() != p.value.shape()) continue;  // no gradient reached this parameter
    auto val = p.value.data();
    auto g = p.grad.data();
    auto m = state.adam.m[i].data();
    auto v = state.adam.v[i].data();
    for (std::size_t j = 0; j < val.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1 - b1) * gj;
      const double vj = b2 * v[j] + (1 - b2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      val[j] = static_cast<float>(val[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + config.adam_eps));
    }
  }
}

namespace {

// Teacher outputs (values only) for one frame batch.
struct TeacherMaps {
  Tensor<float> refiner;
  std::array<Tensor<float>, 3> scales;
};

TeacherMaps snapshot(const ModelOutputs<float>& out) {
  return {out.refiner.value(), {out.refiner_scales[0].value(), out.refiner_scales[1].value(),
                                out.refiner_scales[2].value()}};
}

}  // namespace

LossBreakdown train_step(TrainerState& state, const LabeledBatch& labeled, const FrameTriplet<float>* triplets,
                         const TrainConfig& config) {
  for (auto* p : state.student.parameters()) p->zero_grad();
  Tape<float> tape(true);

  PassContext<float> lctx{tape, Domain::Labeled, NormMode::Train};
  const auto sup_out = state.student.forward(lctx, labeled.images);
  Var<float> total = supervised_loss(sup_out, labeled.masks, config.ppa());
  const double sup = total.value().item();

  const double beta = ramp(state.epoch, config.weights);
  double sic = 0, tic = 0, sc = 0;

  if (config.any_unsupervised()) {
    if (triplets == nullptr) throw ValidationError("unsupervised losses are enabled but no triplet batch was given");
    triplets->validate();
    Tape<float> teacher_tape(false);
    PassContext<float> tctx{teacher_tape, Domain::Unlabeled, NormMode::BatchStats};
    PassContext<float> sctx{tape, Domain::Unlabeled, NormMode::Train};
    const int h = triplets->current.dim(2), w = triplets->current.dim(3);
    const std::array<const Tensor<float>*, 3> frames{&triplets->prev, &triplets->current, &triplets->next};
    std::array<std::optional<TeacherMaps>, 3> teacher_maps;
    auto teacher_on = [&](int i) -> const TeacherMaps& {
      if (!teacher_maps[i]) teacher_maps[i] = snapshot(state.teacher.forward(tctx, *frames[i]));
      return *teacher_maps[i];
    };

    const float eta_sic = static_cast<float>(beta * config.weights.eta_sic);
    const float eta_tic = static_cast<float>(beta * config.weights.eta_tic);
    const float eta_sc = static_cast<float>(beta * config.weights.eta_sc);

    if (config.use_sic) {
      std::vector<int> which = config.sic_all_frames ? std::vector<int>{0, 1, 2} : std::vector<int>{1};
      std::optional<Var<float>> sic_sum;
      for (int i : which) {
        const Tensor<float>& f = *frames[i];
        Var<float> term;
        if (config.scheme == MixScheme::RandomRgb) {
          const MixPlan plan = random_plan(f.dim(0), h, w, config.window, MixScheme::RandomRgb, state.rng);
          const Tensor<float> lam = plan.lambda_map<float>();
          const Tensor<float> shuffled = apply_shuffle(f, plan);
          const Tensor<float> mixed = mix(f, shuffled, lam);
          const Tensor<float> t_plain = teacher_on(i).refiner;
          const Tensor<float> t_shuf = state.teacher.forward(tctx, shuffled).refiner.value();
          const auto s_out = state.student.forward(sctx, mixed);
          term = sic_loss(s_out.refiner, t_plain, t_shuf, lam);
        } else {
          const auto tp = state.teacher.encode(tctx, f);
          const Tensor<float>& deep = tp.levels[3].value();
          const MixPlan plan =
              config.scheme == MixScheme::Spatial
                  ? lcs_plan(deep, config.window, state.rng)
                  : random_plan(deep.dim(0), deep.dim(2), deep.dim(3), config.window, MixScheme::RandomFeature,
                                state.rng);
          const Tensor<float> lam = plan.lambda_map<float>();
          if (!teacher_maps[i]) teacher_maps[i] = snapshot(state.teacher.decode_from_deep(tctx, tp.levels[3], tp, h, w));
          const Var<float> t_deep_shuf = teacher_tape.constant(apply_shuffle(deep, plan));
          const Tensor<float> t_shuf = state.teacher.decode_from_deep(tctx, t_deep_shuf, tp, h, w).refiner.value();
          const auto sp = state.student.encode(sctx, f);
          const Var<float> mixed = mix(sp.levels[3], apply_shuffle(sp.levels[3], plan), lam);
          const auto s_out = state.student.decode_from_deep(sctx, mixed, sp, h, w);
          term = sic_loss(s_out.refiner, teacher_maps[i]->refiner, t_shuf, lam);
        }
        sic_sum = sic_sum ? add(*sic_sum, term) : term;
      }
      const Var<float> sic_mean = mul(*sic_sum, 1.0f / static_cast<float>(which.size()));
      sic = sic_mean.value().item();
      total = add(total, mul(sic_mean, eta_sic));
    }

    if (config.use_tic || config.use_sc) {
      const auto s_out = state.student.forward(sctx, triplets->current);
      if (config.use_tic) {
        const Tensor<float> target = temporal_target(teacher_on(0).refiner, teacher_on(2).refiner, *triplets);
        const Var<float> term = tic_loss(s_out.refiner, target);
        tic = term.value().item();
        total = add(total, mul(term, eta_tic));
      }
      if (config.use_sc) {
        const Var<float> term = sc_loss(s_out.refiner_scales, teacher_on(1).scales);
        sc = term.value().item();
        total = add(total, mul(term, eta_sc));
      }
    }
  }

  const LossBreakdown breakdown = total_loss(sup, sic, tic, sc, beta, config.weights);
  tape.backward(total);
  adam_step(state, config, learning_rate(config, state.epoch));
  ema_update(state, config.ema_decay);
  ++state.step;
  return breakdown;
}

Tensor<float> flow_between(const Video& video, int from, int to) {
  const int n = video.length();
  if (from < 0 || from >= n || to < 0 || to >= n || from == to) throw ValidationError("flow_between: bad frame pair");
  if (!video.has_flows()) throw ValidationError("video " + video.id + " has no flows");
  const int dir = to > from ? 1 : -1;
  auto step = [&](int t) -> const Tensor<float>& {
    return dir > 0 ? video.flow_fwd[static_cast<std::size_t>(t)] : video.flow_bwd[static_cast<std::size_t>(t - 1)];
  };
  Tensor<float> acc = step(from);
  for (int t = from + dir; t != to; t += dir) {
    // F_{from->t+dir}(p) = F_{from->t}(p) + F_{t->t+dir}(p + F_{from->t}(p))
    acc = elementwise(BinaryKind::Add, acc, warp(step(t), acc));
  }
  return acc;
}

FrameTriplet<float> make_triplets(const std::vector<Video>& videos, const std::vector<std::pair<int, int>>& picks,
                                  int k, double lambda_t) {
  std::vector<const Tensor<float>*> prev, cur, next;
  std::vector<Tensor<float>> bwd, fwd;
  for (const auto& [vi, t] : picks) {
    const Video& v = videos.at(static_cast<std::size_t>(vi));
    prev.push_back(&v.frames.at(static_cast<std::size_t>(t - k)));
    cur.push_back(&v.frames.at(static_cast<std::size_t>(t)));
    next.push_back(&v.frames.at(static_cast<std::size_t>(t + k)));
    bwd.push_back(flow_between(v, t, t - k));
    fwd.push_back(flow_between(v, t, t + k));
  }
  std::vector<const Tensor<float>*> bp, fp;
  for (std::size_t i = 0; i < bwd.size(); ++i) {
    bp.push_back(&bwd[i]);
    fp.push_back(&fwd[i]);
  }
  FrameTriplet<float> out{stack_batch(prev), stack_batch(cur), stack_batch(next), stack_batch(bp), stack_batch(fp),
                          lambda_t, k};
  out.validate();
  return out;
}

EpochSummary train_epoch(TrainerState& state, const Dataset& data, const TrainConfig& config,
                         const std::function<void(const StepLog&)>& on_step) {
  if (data.labeled.empty()) throw ValidationError("training needs labeled images");
  if (state.epoch >= config.epochs) throw ValidationError("all configured epochs are already complete");
  const bool unsupervised = config.any_unsupervised();

  std::vector<std::size_t> order(data.labeled.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), state.rng);

  std::vector<std::pair<int, int>> triplets;
  if (unsupervised) {
    for (std::size_t v = 0; v < data.videos.size(); ++v) {
      if (config.use_tic && !data.videos[v].has_flows()) {
        throw ValidationError("video " + data.videos[v].id + " has no flows but TIC is enabled");
      }
      for (int t = config.k; t + config.k < data.videos[v].length(); ++t) triplets.emplace_back(static_cast<int>(v), t);
    }
    if (triplets.empty()) throw ValidationError("unsupervised losses are enabled but no video has a valid triplet");
    std::shuffle(triplets.begin(), triplets.end(), state.rng);
  }

  EpochSummary summary;
  summary.epoch = state.epoch;
  std::size_t cursor = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.labeled_batch)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.labeled_batch));
    std::vector<const Tensor<float>*> imgs, masks;
    for (std::size_t i = start; i < end; ++i) {
      imgs.push_back(&data.labeled[order[i]].image);
      masks.push_back(&data.labeled[order[i]].mask);
    }
    const LabeledBatch batch{stack_batch(imgs), stack_batch(masks)};

    std::optional<FrameTriplet<float>> tb;
    if (unsupervised) {
      std::vector<std::pair<int, int>> picks;
      for (int j = 0; j < config.unlabeled_batch; ++j) {
        if (cursor == triplets.size()) {
          std::shuffle(triplets.begin(), triplets.end(), state.rng);
          cursor = 0;
        }
        picks.push_back(triplets[cursor++]);
      }
      tb = make_triplets(data.videos, picks, config.k, config.lambda_t);
    }

    const LossBreakdown loss = train_step(state, batch, tb ? &*tb : nullptr, config);
    summary.mean_sup += loss.sup;
    summary.mean_total += loss.total;
    ++summary.steps;
    if (on_step) on_step(StepLog{state.step, state.epoch, loss});
  }
  summary.mean_sup /= summary.steps;
  summary.mean_total /= summary.steps;
  ++state.epoch;
  return summary;
}

std::string log_header() { return "step,epoch,L_sup,L_sic,L_tic,L_sc,beta,L_total"; }

std::string log_row(const StepLog& log) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(log.step),
                log.epoch, log.loss.sup, log.loss.sic, log.loss.tic, log.loss.sc, log.loss.beta, log.loss.total);
  return buf;
}

Domain inference_domain(SaNet<float>& model) {
  for (auto* n : model.norms()) {
    if (n->stats[static_cast<std::size_t>(Domain::Unlabeled)].updates > 0) return Domain::Unlabeled;
  }
  return Domain::Labeled;
}

std::vector<Tensor<float>> predict_frames(SaNet<float>& model, const std::vector<Tensor<float>>& frames,
                                          Domain domain) {
  std::vector<Tensor<float>> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    Tape<float> tape(false);
    PassContext<float> ctx{tape, domain, NormMode::Running};
    out.push_back(model.forward(ctx, f).refiner.value());
  }
  return out;
}

}  // namespace stict
