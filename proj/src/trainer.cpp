#include "rrt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rrt/binary_io.hpp"
#include "rrt/errors.hpp"
#include "rrt/optim.hpp"

namespace rrt {

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be non-negative");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (neg_pool_size == 0) throw ConfigError("neg_pool_size must be positive");
  if (grad_clip_norm && !(*grad_clip_norm > 0)) throw ConfigError("grad_clip_norm must be positive");
}

TrainingSet::TrainingSet(std::vector<ImageRecord> images, std::size_t neg_pool_size)
    : images_(std::move(images)), neg_pool_size_(neg_pool_size) {
  if (images_.empty()) throw ConfigError("training set is empty");
  if (neg_pool_size_ == 0) throw ConfigError("neg_pool_size must be positive");
  map_ = make_record_map(images_);
  for (const auto& r : images_) by_label_[r.label].push_back(r.id);
  const auto index = GlobalIndex::build(images_);
  const std::size_t k = std::min(neg_pool_size_, images_.size() - 1);
  for (const auto& r : images_) {
    NeighborList list;
    if (k > 0) list = index.search(query_vector(r), k, r.id);
    list.query_id = r.id;
    neighbors_.emplace(r.id, std::move(list));
  }
}

const ImageRecord& TrainingSet::record(std::uint32_t id) const {
  const auto it = map_.find(id);
  if (it == map_.end()) throw FormatError("unknown training image id " + std::to_string(id));
  return *it->second;
}

const NeighborList& TrainingSet::neighbors(std::uint32_t id) const {
  const auto it = neighbors_.find(id);
  if (it == neighbors_.end()) throw FormatError("unknown training image id " + std::to_string(id));
  return it->second;
}

const std::vector<std::uint32_t>& TrainingSet::label_members(std::uint32_t label) const {
  static const std::vector<std::uint32_t> kEmpty;
  const auto it = by_label_.find(label);
  return it == by_label_.end() ? kEmpty : it->second;
}

std::optional<SampledPairs> sample_pair(const TrainingSet& set, std::uint32_t anchor, std::mt19937_64& rng) {
  const auto& a = set.record(anchor);
  std::vector<std::uint32_t> partners;
  for (auto id : set.label_members(a.label))
    if (id != anchor) partners.push_back(id);
  if (partners.empty()) return std::nullopt;

  SampledPairs out;
  std::uniform_int_distribution<std::size_t> pick_pos(0, partners.size() - 1);
  out.positive = {anchor, partners[pick_pos(rng)], 1};

  std::vector<std::uint32_t> pool;
  const auto& entries = set.neighbors(anchor).entries;
  for (std::size_t i = 0; i < std::min(entries.size(), set.neg_pool_size()); ++i) {
    if (set.record(entries[i].id).label != a.label) pool.push_back(entries[i].id);
  }
  if (pool.empty()) {
    out.negative_fallback = true;
    for (const auto& r : set.images())
      if (r.label != a.label) pool.push_back(r.id);
    if (pool.empty()) throw ConfigError("training set has a single label; no negatives exist");
  }
  std::uniform_int_distribution<std::size_t> pick_neg(0, pool.size() - 1);
  out.negative = {anchor, pool[pick_neg(rng)], 0};
  return out;
}

namespace {

const ImageRecord& find_record(const RecordMap& records, std::uint32_t id) {
  const auto it = records.find(id);
  if (it == records.end()) throw FormatError("unknown image id " + std::to_string(id));
  return *it->second;
}

double bce(double logit, int target) {
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

// Accumulates gradients of the mean pair loss, clips, checks for NaN and
// applies one optimizer update.
LossRecord optimizer_step(const RecordMap& records, std::span<const PairSample> pairs, const TrainConfig& cfg,
                          Model<float>& model, ag::AdamW<float>& opt, std::vector<ag::Tensor<float>>& params,
                          std::size_t step, std::size_t epoch) {
  opt.zero_grad();
  double total = 0.0;
  const float weight = 1.0f / static_cast<float>(pairs.size());
  for (const auto& p : pairs) {
    const auto logit = pair_logit(model, find_record(records, p.anchor), find_record(records, p.partner));
    const auto loss = ag::bce_with_logits(logit, p.label);
    total += loss.item();
    ag::backward(ag::scale(loss, weight));
  }
  const double mean_loss = total / static_cast<double>(pairs.size());
  if (cfg.grad_clip_norm) ag::clip_global_grad_norm(params, *cfg.grad_clip_norm);
  const double norm = ag::global_grad_norm(params);
  if (!std::isfinite(mean_loss) || !std::isfinite(norm)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "non-finite training loss at step %zu (lr %.6g, grad norm %.6g, loss %.6g)", step,
                  opt.options().lr, norm, mean_loss);
    throw NumericalError(buf);
  }
  opt.step();
  return {step, epoch, mean_loss, norm};
}

double scheduled_lr(const TrainConfig& cfg, std::size_t epoch) {
  if (!cfg.step_schedule) return cfg.lr;
  if (epoch * 10 >= cfg.epochs * 8) return cfg.lr * 0.01;
  if (epoch * 10 >= cfg.epochs * 6) return cfg.lr * 0.1;
  return cfg.lr;
}

}  // namespace

TrainResult train(const TrainingSet& set, const TrainConfig& cfg, Model<float>& model, const EpochCallback& on_epoch) {
  cfg.validate();
  auto params = model.parameters();
  ag::AdamW<float> opt(params, {cfg.lr, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);

  std::vector<std::uint32_t> eligible;
  std::size_t ineligible = 0;
  for (const auto& r : set.images()) {
    if (set.label_members(r.label).size() >= 2) {
      eligible.push_back(r.id);
    } else {
      ++ineligible;
    }
  }
  if (eligible.empty()) throw ConfigError("no training anchor has a same-label partner");

  TrainResult result;
  const std::size_t steps_per_epoch =
      cfg.steps_per_epoch ? cfg.steps_per_epoch : (eligible.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::uint32_t> deck;
  std::size_t cursor = 0;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(scheduled_lr(cfg, epoch));
    result.skipped_anchors += ineligible;
    if (!cfg.steps_per_epoch) cursor = deck.size();  // fresh shuffle every epoch
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<PairSample> batch;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        if (cursor >= deck.size()) {
          if (!cfg.steps_per_epoch && b > 0) break;  // partial last batch of the pass
          deck = eligible;
          std::shuffle(deck.begin(), deck.end(), rng);
          cursor = 0;
        }
        const auto sampled = sample_pair(set, deck[cursor++], rng);
        batch.push_back(sampled->positive);
        batch.push_back(sampled->negative);
        if (sampled->negative_fallback) ++result.negative_fallbacks;
      }
      result.history.push_back(optimizer_step(set.record_map(), batch, cfg, model, opt, params, step++, epoch + 1));
    }
    if (on_epoch) on_epoch(epoch + 1, model);
  }
  return result;
}

TrainResult fit_pairs(const RecordMap& records, std::span<const PairSample> pairs, const TrainConfig& cfg,
                      Model<float>& model, std::size_t steps) {
  cfg.validate();
  if (pairs.empty()) throw ConfigError("fit_pairs: empty pair list");
  auto params = model.parameters();
  ag::AdamW<float> opt(params, {cfg.lr, cfg.weight_decay});
  TrainResult result;
  for (std::size_t step = 0; step < steps; ++step) {
    result.history.push_back(optimizer_step(records, pairs, cfg, model, opt, params, step, step + 1));
  }
  return result;
}

double evaluate_loss(const RecordMap& records, const Model<float>& model, std::span<const PairSample> pairs) {
  if (pairs.empty()) throw ConfigError("evaluate_loss: empty pair list");
  double total = 0.0;
  for (const auto& p : pairs) {
    const auto s = score_pair(model, find_record(records, p.anchor), find_record(records, p.partner));
    total += bce(s.logit, p.label);
  }
  return total / static_cast<double>(pairs.size());
}

std::string loss_csv(std::span<const LossRecord> history) {
  std::string out = "step,epoch,loss,grad_norm\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g\n", r.step, r.epoch, r.loss, r.grad_norm);
    out += buf;
  }
  return out;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history) {
  io::write_text_file(path, loss_csv(history));
}

}  // namespace rrt
