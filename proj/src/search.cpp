#include "attnas/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "attnas/error.hpp"
#include "attnas/ops.hpp"

namespace attnas {

std::string phase_name(SearchPhase p) { return p == SearchPhase::kCarSearch ? "car_search" : "finetune"; }

SearchConfig SearchConfig::car_search_defaults() { return SearchConfig{}; }

SearchConfig SearchConfig::finetune_defaults() {
  SearchConfig c;
  c.phase = SearchPhase::kFinetune;
  c.epochs = 50;
  c.alpha_opt.lr = 1e-4;
  return c;
}

std::string config_digest(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::uint64_t phase_tag(SearchPhase p) { return p == SearchPhase::kCarSearch ? 1 : 2; }

std::string session_signature(const MacroConfig& m, const SearchConfig& c, std::size_t rows) {
  std::string s = std::to_string(m.image_size) + "/" + std::to_string(m.stem_channels) + "/" +
                  std::to_string(m.num_classes) + "/";
  for (const auto& st : m.stages)
    s += std::to_string(st.channels) + "x" + std::to_string(st.layers) + "s" + std::to_string(st.stride) + ";";
  s += phase_name(c.phase) + "/" + std::to_string(c.seed) + "/" + std::to_string(c.batch_size) + "/" +
       std::to_string(rows);
  return s;
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

SearchSession::SearchSession(const MacroConfig& macro, const SearchConfig& cfg, const ImageDataset& data,
                             ArchParams alpha)
    : macro_(macro), cfg_(cfg), net_(macro, mix_seed(cfg.seed, phase_tag(cfg.phase))) {
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  if (alpha.layers() != macro.num_layers() || !alpha.alpha.defined() || alpha.alpha.rank() != 2 ||
      alpha.alpha.dim(1) != kNumCandidates) {
    throw ConfigError("architecture parameters cover " + std::to_string(alpha.layers()) + " layers, config has " +
                      std::to_string(macro.num_layers()));
  }
  for (auto r : alpha.row_of_layer)
    if (r >= alpha.rows()) throw ConfigError("architecture parameter row index out of range");
  if (data.image_size != macro.image_size) {
    throw ConfigError("dataset images are " + std::to_string(data.image_size) + "px, config expects " +
                      std::to_string(macro.image_size));
  }
  if (cfg.phase == SearchPhase::kFinetune) {
    if (!data.labeled()) throw ConfigError("fine-tuning needs labelled data");
    if (data.class_count != macro.num_classes) {
      throw ConfigError("dataset has " + std::to_string(data.class_count) + " classes, config expects " +
                        std::to_string(macro.num_classes));
    }
  }
  auto [a, b] = split(data, SplitSpec{cfg.split_ratio, mix_seed(cfg.seed, 0x51)});
  train_ = std::move(a);
  val_ = std::move(b);
  if (train_.count == 0 || val_.count == 0) throw ConfigError("search split produced an empty partition");
  norm_ = data.stats;
  for (std::size_t c = 0; c < 3; ++c)
    fill_[c] = cfg.car.fill == MaskFill::kMean ? 0.0 : (0.0 - norm_.mean[c]) / norm_.std[c];

  alpha_.row_of_layer = alpha.row_of_layer;
  alpha_.alpha = alpha.alpha.detach();
  alpha_.alpha.set_requires_grad(true);

  if (cfg.phase == SearchPhase::kCarSearch) {
    Rng rng(mix_seed(cfg.seed, 0xDEC));
    decoder_ = std::make_unique<Decoder>(macro.feature_channels(), macro.downsampling_stages(), macro.in_channels, rng);
  }
  w_opt_ = std::make_unique<Sgd>(tensors_of(w_params()), cfg.w_opt);
  alpha_opt_ = std::make_unique<Adam>(std::vector<Tensor>{alpha_.alpha}, cfg.alpha_opt);
  schedule_ = LrSchedule{cfg.w_cosine ? LrSchedule::Kind::kCosine : LrSchedule::Kind::kConstant, cfg.w_opt.lr,
                         std::max<std::size_t>(cfg.epochs, 1)};
}

ParamList SearchSession::w_params() const {
  ParamList p = net_.weights();
  if (decoder_) {
    auto d = decoder_->params();
    p.insert(p.end(), d.begin(), d.end());
  }
  return p;
}

double SearchSession::last_val_loss() const {
  for (auto it = history_.rbegin(); it != history_.rend(); ++it)
    if (it->split == "val") return it->loss;
  return std::numeric_limits<double>::quiet_NaN();
}

SearchSession::StepStats SearchSession::step(const std::vector<std::size_t>& indices, const ImageDataset& split,
                                             Rng& rng, bool alpha_step) {
  const ParamList w = w_params();
  set_requires_grad(w, !alpha_step);
  alpha_.alpha.set_requires_grad(alpha_step);

  const Tensor x = split.batch(indices, norm_);
  StepStats stats;
  {
    Tape tape;
    Tensor loss;
    if (cfg_.phase == SearchPhase::kCarSearch) {
      std::vector<MaskSpec> masks;
      masks.reserve(indices.size());
      for (std::size_t i = 0; i < indices.size(); ++i) {
        masks.push_back(generate_masks(rng, macro_.image_size, cfg_.car.count_range, cfg_.car.size_range));
      }
      const Tensor masked = apply_masks(x, masks, fill_);
      const Tensor recon =
          car_forward([&](const Tensor& t) { return net_.features(t, alpha_); }, *decoder_, masked);
      loss = car_loss(recon, x, cfg_.car.loss_region, masks);
    } else {
      const auto labels = split.batch_labels(indices);
      const Tensor logits = net_.logits(x, alpha_);
      loss = ops::cross_entropy(logits, labels, cfg_.label_smoothing);
      const std::size_t k = logits.dim(1);
      for (std::size_t b = 0; b < labels.size(); ++b) {
        stats.correct += argmax_row(logits.values().subspan(b * k, k)) == static_cast<std::size_t>(labels[b]);
      }
    }
    stats.loss = loss.item();
    if (!std::isfinite(stats.loss)) throw NumericError(phase_name(cfg_.phase) + ": non-finite loss");
    tape.backward(loss);
  }
  if (alpha_step) {
    alpha_opt_->step();
  } else {
    w_opt_->step();
  }
  w_opt_->zero_grad();
  alpha_opt_->zero_grad();
  set_requires_grad(w, true);
  alpha_.alpha.set_requires_grad(true);
  return stats;
}

void SearchSession::run_epoch() {
  Rng rng(mix_seed(mix_seed(cfg_.seed, phase_tag(cfg_.phase) + 16), epoch_));
  w_opt_->set_lr(schedule_.at(epoch_));

  std::vector<std::size_t> tperm(train_.count), vperm(val_.count);
  std::iota(tperm.begin(), tperm.end(), 0);
  std::iota(vperm.begin(), vperm.end(), 0);
  std::shuffle(tperm.begin(), tperm.end(), rng);
  std::shuffle(vperm.begin(), vperm.end(), rng);

  const std::size_t bs = cfg_.batch_size;
  const std::size_t nt = (tperm.size() + bs - 1) / bs;
  const std::size_t nv = (vperm.size() + bs - 1) / bs;
  auto slice = [&](const std::vector<std::size_t>& perm, std::size_t b) {
    const std::size_t lo = b * bs;
    return std::vector<std::size_t>(perm.begin() + static_cast<long>(lo),
                                    perm.begin() + static_cast<long>(std::min(perm.size(), lo + bs)));
  };

  double tloss = 0.0, vloss = 0.0;
  std::size_t tseen = 0, vseen = 0, tcorrect = 0, vcorrect = 0;
  for (std::size_t it = 0; it < std::max(nt, nv); ++it) {
    const auto vb = slice(vperm, it % nv);
    const auto vs = step(vb, val_, rng, true);
    vloss += vs.loss * static_cast<double>(vb.size());
    vcorrect += vs.correct;
    vseen += vb.size();

    const auto tb = slice(tperm, it % nt);
    const auto ts = step(tb, train_, rng, false);
    tloss += ts.loss * static_cast<double>(tb.size());
    tcorrect += ts.correct;
    tseen += tb.size();
  }
  ++epoch_;
  const bool cls = cfg_.phase == SearchPhase::kFinetune;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::string ph = phase_name(cfg_.phase);
  history_.push_back({ph, epoch_, "train", tloss / static_cast<double>(tseen),
                      cls ? static_cast<double>(tcorrect) / static_cast<double>(tseen) : nan});
  history_.push_back({ph, epoch_, "val", vloss / static_cast<double>(vseen),
                      cls ? static_cast<double>(vcorrect) / static_cast<double>(vseen) : nan});
}

void SearchSession::run(const std::function<void(const SearchSession&)>& on_epoch) {
  while (epoch_ < cfg_.epochs) {
    run_epoch();
    if (on_epoch) on_epoch(*this);
  }
}

Checkpoint SearchSession::checkpoint() const {
  Checkpoint ck;
  ck.put_string("signature", session_signature(macro_, cfg_, alpha_.rows()));
  ck.put_int("epoch", static_cast<std::int64_t>(epoch_));
  ck.put_tensor("alpha", alpha_.alpha.shape(), alpha_.alpha.values());
  const ParamList w = w_params();
  const auto& mom = w_opt_->momentum_buffers();
  for (std::size_t i = 0; i < w.size(); ++i) {
    ck.put_tensor("w/" + w[i].name, w[i].tensor.shape(), w[i].tensor.values());
    ck.put_tensor("sgd/" + w[i].name, w[i].tensor.shape(), mom[i]);
  }
  ck.put_int("adam.steps", static_cast<std::int64_t>(alpha_opt_->step_count()));
  ck.put_tensor("adam.m", alpha_.alpha.shape(), alpha_opt_->first_moments()[0]);
  ck.put_tensor("adam.v", alpha_.alpha.shape(), alpha_opt_->second_moments()[0]);
  ck.put_string("history", history_to_csv(history_));
  return ck;
}

void SearchSession::restore(const Checkpoint& ck) {
  const auto sig = ck.string_value("signature");
  if (sig != session_signature(macro_, cfg_, alpha_.rows())) {
    throw ConfigError("checkpoint was written for a different search configuration (" + sig + ")");
  }
  epoch_ = static_cast<std::size_t>(ck.int_value("epoch"));
  ck.read_into("alpha", alpha_.alpha);
  const ParamList w = w_params();
  auto& mom = w_opt_->momentum_buffers();
  for (std::size_t i = 0; i < w.size(); ++i) {
    Tensor t = w[i].tensor;
    ck.read_into("w/" + w[i].name, t);
    ck.read_into("sgd/" + w[i].name, mom[i]);
  }
  alpha_opt_->set_step_count(static_cast<std::uint64_t>(ck.int_value("adam.steps")));
  ck.read_into("adam.m", alpha_opt_->first_moments()[0]);
  ck.read_into("adam.v", alpha_opt_->second_moments()[0]);
  history_ = history_from_csv(ck.string_value("history"));
}

void SearchSession::load_weights(const Supernet& from) {
  if (epoch_ != 0) throw ContractError("supernet weights can only be loaded before the first epoch");
  const ParamList src = from.weights(), dst = net_.weights();
  if (!(from.config() == macro_) || src.size() != dst.size())
    throw ConfigError("supernet weights come from a different macro config");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    Tensor t = dst[i].tensor;
    auto to = t.mutable_values();
    const auto v = src[i].tensor.values();
    std::copy(v.begin(), v.end(), to.begin());
  }
}

PhaseResult run_car_search(const MacroConfig& macro, const SearchConfig& cfg, const ImageDataset& data,
                           const ArchParams& layout) {
  if (cfg.phase != SearchPhase::kCarSearch) throw ConfigError("run_car_search needs a car_search config");
  ArchParams zero;
  zero.row_of_layer = layout.row_of_layer;
  zero.alpha = Tensor::zeros({layout.rows(), kNumCandidates});
  SearchSession s(macro, cfg, data, zero);
  s.run();
  return {s.alpha(), s.history(), s.last_val_loss()};
}

PhaseResult run_finetune(const MacroConfig& macro, const SearchConfig& cfg, const ImageDataset& data,
                         const ArchParams& alpha_init) {
  if (cfg.phase != SearchPhase::kFinetune) throw ConfigError("run_finetune needs a finetune config");
  SearchSession s(macro, cfg, data, alpha_init);
  s.run();
  return {s.alpha(), s.history(), s.last_val_loss()};
}

PipelineResult run_full_pipeline(const PipelineConfig& cfg, const ImageDataset& data) {
  if (cfg.seeds == 0) throw ConfigError("seeds must be at least 1");
  if (cfg.warm_start_weights && !cfg.use_car) throw ConfigError("warm_start_weights needs the CAR phase");
  if (cfg.car.phase != SearchPhase::kCarSearch || cfg.finetune.phase != SearchPhase::kFinetune)
    throw ConfigError("pipeline phases are mislabelled");
  cfg.macro.validate();
  std::optional<PipelineResult> best;
  std::vector<std::pair<std::uint64_t, double>> losses;
  for (std::size_t k = 0; k < cfg.seeds; ++k) {
    const std::uint64_t seed = cfg.seed + k;
    const ArchParams layout =
        cfg.uniform_space ? ArchParams::stage_tied(cfg.macro) : ArchParams::zeros(cfg.macro.num_layers());
    PipelineResult r;
    r.seed = seed;
    ArchParams start;
    std::unique_ptr<SearchSession> car;
    if (cfg.use_car) {
      SearchConfig c = cfg.car;
      c.seed = seed;
      ArchParams zero;
      zero.row_of_layer = layout.row_of_layer;
      zero.alpha = Tensor::zeros({layout.rows(), kNumCandidates});
      car = std::make_unique<SearchSession>(cfg.macro, c, data, zero);
      car->run();
      r.history = car->history();
      start = car->alpha();
    } else if (cfg.alpha_init == AlphaInit::kUniform) {
      start = ArchParams::uniform_random(layout, cfg.alpha_init_eps, mix_seed(seed, 0xA1));
    } else {
      start = layout;
    }
    SearchConfig f = cfg.finetune;
    f.seed = seed;
    SearchSession ft(cfg.macro, f, data, start);
    if (cfg.warm_start_weights) ft.load_weights(car->supernet());
    car.reset();
    ft.run();
    r.history.insert(r.history.end(), ft.history().begin(), ft.history().end());
    r.alpha = ft.alpha();
    r.final_val_loss = ft.last_val_loss();
    r.arch = discretize(r.alpha, cfg.macro);
    r.arch.seed = seed;
    losses.emplace_back(seed, r.final_val_loss);
    if (!best || r.final_val_loss < best->final_val_loss) best = std::move(r);
  }
  best->seed_losses = std::move(losses);
  return std::move(*best);
}

}  // namespace attnas
