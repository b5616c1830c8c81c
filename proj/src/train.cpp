#include "mambadet/train.hpp"

#include "mambadet/binary_io.hpp"
#include "mambadet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mambadet::train {

namespace {

constexpr char kStateMagic[8] = {'M', 'D', 'E', 'T', 'S', 'T', 'A', 'T'};
constexpr std::uint32_t kStateVersion = 1;
constexpr std::size_t kEvalBatch = 64;

void put_nested(io::Writer& w, const std::vector<std::vector<double>>& v) {
  w.put<std::uint64_t>(v.size());
  for (const auto& x : v) w.put_doubles(x);
}

std::vector<std::vector<double>> get_nested(io::Reader& r) {
  const auto n = r.get<std::uint64_t>();
  if (n > r.remaining()) throw io::FormatError("truncated train state");
  std::vector<std::vector<double>> v(n);
  for (auto& x : v) x = r.get_doubles();
  return v;
}

}  // namespace

void TrainHyper::validate() const {
  if (epochs == 0 || batch == 0) throw std::invalid_argument("train: epochs and batch must be >= 1");
  if (!(lr >= 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
      !(eps > 0.0)) {
    throw std::invalid_argument("train: need lr >= 0, betas in [0, 1) and eps > 0");
  }
}

std::string TrainState::serialize() const {
  io::Writer w;
  w.put_raw(kStateMagic, sizeof(kStateMagic));
  w.put<std::uint32_t>(kStateVersion);
  w.put<std::uint64_t>(step);
  w.put<std::uint64_t>(total_steps);
  w.put<std::uint64_t>(shuffle_seed);
  put_nested(w, m);
  put_nested(w, v);
  w.put<double>(best_val);
  w.put<std::uint64_t>(best_step);
  put_nested(w, best_params);
  w.put_doubles(loss_history);
  w.put_doubles(val_history);
  return w.bytes();
}

TrainState TrainState::deserialize(const std::string& bytes) {
  io::Reader r(bytes);
  if (r.remaining() < sizeof(kStateMagic) ||
      !std::equal(kStateMagic, kStateMagic + sizeof(kStateMagic),
                  r.get_raw(sizeof(kStateMagic)).begin())) {
    throw io::FormatError("not a train state (bad magic)");
  }
  if (r.get<std::uint32_t>() != kStateVersion) throw io::FormatError("unsupported train state version");
  TrainState s;
  s.step = r.get<std::uint64_t>();
  s.total_steps = r.get<std::uint64_t>();
  s.shuffle_seed = r.get<std::uint64_t>();
  s.m = get_nested(r);
  s.v = get_nested(r);
  s.best_val = r.get<double>();
  s.best_step = r.get<std::uint64_t>();
  s.best_params = get_nested(r);
  s.loss_history = r.get_doubles();
  s.val_history = r.get_doubles();
  if (r.remaining() != 0) throw io::FormatError("trailing bytes after train state");
  return s;
}

double cosine_lr(double lr, std::uint64_t step, std::uint64_t total) {
  if (total == 0) return lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adam_step(vision::ParamList& params, TrainState& state, const TrainHyper& hyper, double lr) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
  }
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor& p = params[i].tensor;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.numel()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    }
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + hyper.eps);
    }
    p.zero_grad();
  }
}

std::vector<int> predict(const model::Model& m, std::span<const vision::Image> images) {
  std::vector<int> out;
  out.reserve(images.size());
  for (std::size_t begin = 0; begin < images.size(); begin += kEvalBatch) {
    const std::size_t n = std::min(kEvalBatch, images.size() - begin);
    const ad::Tensor logits = model::forward(m, images.subspan(begin, n));
    const std::size_t k = logits.dim(1);
    const auto v = logits.data();
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = v.subspan(i * k, k);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

double accuracy(const model::Model& m, const data::Flat& set) {
  if (set.images.empty()) throw std::invalid_argument("accuracy: empty set");
  const auto pred = predict(m, set.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == set.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

TrainState train(model::Model& m, const data::Flat& train_set, const data::Flat& val_set,
                 const TrainHyper& hyper, std::optional<TrainState> resume,
                 const ProgressFn& progress) {
  hyper.validate();
  const std::size_t n = train_set.images.size();
  if (n == 0 || val_set.images.empty()) throw std::invalid_argument("train: empty train or val set");
  if (train_set.labels.size() != n) throw std::invalid_argument("train: label count mismatch");
  const std::size_t steps_per_epoch = (n + hyper.batch - 1) / hyper.batch;
  const std::uint64_t total = hyper.epochs * steps_per_epoch;

  auto params = m.parameters();
  TrainState state;
  if (resume) {
    state = std::move(*resume);
    if (state.total_steps != total || state.shuffle_seed != hyper.seed ||
        (state.step != 0 && state.m.size() != params.size())) {
      throw std::invalid_argument("train: resume state does not match this run");
    }
  } else {
    state.total_steps = total;
    state.shuffle_seed = hyper.seed;
  }
  for (auto& p : params) p.tensor.zero_grad();

  std::vector<std::size_t> perm;
  std::size_t perm_epoch = static_cast<std::size_t>(-1);
  std::vector<vision::Image> batch;
  std::vector<int> labels;
  while (state.step < total && (hyper.stop_after == 0 || state.step < hyper.stop_after)) {
    const std::size_t epoch = state.step / steps_per_epoch;
    const std::size_t pos = state.step % steps_per_epoch;
    if (epoch != perm_epoch) {
      Rng rng(hyper.seed, epoch + 1);
      perm = random_permutation(n, rng);
      perm_epoch = epoch;
    }
    batch.clear();
    labels.clear();
    for (std::size_t i = pos * hyper.batch; i < std::min(n, (pos + 1) * hyper.batch); ++i) {
      batch.push_back(train_set.images[perm[i]]);
      labels.push_back(train_set.labels[perm[i]]);
    }
    double loss_value = 0.0;
    {
      ad::Tape tape;
      ad::TapeScope scope(tape);
      const ad::Tensor loss = ad::softmax_cross_entropy(model::forward(m, batch), labels);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw ad::NumericError("training diverged: non-finite loss at step " +
                               std::to_string(state.step));
      }
      tape.backward(loss);
    }
    adam_step(params, state, hyper, cosine_lr(hyper.lr, state.step, total));
    state.loss_history.push_back(loss_value);
    ++state.step;

    if (pos + 1 == steps_per_epoch) {
      const double val = accuracy(m, val_set);
      state.val_history.push_back(val);
      if (val > state.best_val) {
        state.best_val = val;
        state.best_step = state.step;
        state.best_params.clear();
        for (const auto& p : params) {
          state.best_params.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
        }
      }
      if (progress) progress(state, epoch);
    }
  }
  if (state.finished() && !state.best_params.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto dst = params[i].tensor.mutable_data();
      std::copy(state.best_params[i].begin(), state.best_params[i].end(), dst.begin());
    }
  }
  return state;
}

}  // namespace mambadet::train
