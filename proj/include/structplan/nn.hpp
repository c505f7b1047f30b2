#pragma once

// Named parameter storage, tape binding, a handful of layers built from the
// autodiff primitives, Adam, and the finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "structplan/autodiff.hpp"
#include "structplan/errors.hpp"
#include "structplan/rng.hpp"

namespace structplan {

using ad::Tensor;
using ParamStore = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;
using TrainablePredicate = std::function<bool(std::string_view)>;

inline TrainablePredicate prefix_predicate(std::vector<std::string> prefixes) {
  return [prefixes = std::move(prefixes)](std::string_view name) {
    return std::any_of(prefixes.begin(), prefixes.end(),
                       [&](const std::string& p) { return name.starts_with(p); });
  };
}

inline Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t(rows, cols);
  for (auto& v : t.data) v = stddev * rng.normal();
  return t;
}

/// Binds store entries to tape leaves on first use. Leaves reference the
/// store in place, so the store must not be modified while the tape lives.
class Binder {
 public:
  Binder(ad::Tape& tape, const ParamStore& store, TrainablePredicate trainable = {})
      : tape_(tape), store_(store), trainable_(std::move(trainable)) {}

  ad::Var operator()(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    auto it = store_.find(name);
    if (it == store_.end()) throw NotFoundError("missing parameter '" + name + "'");
    const bool rg = trainable_ && trainable_(name);
    ad::Var v = tape_.external(it->second, rg);
    bound_.emplace(name, v);
    return v;
  }

  ad::Tape& tape() { return tape_; }
  const ParamStore& store() const { return store_; }

  /// Adds the gradients of every trainable parameter touched by this tape
  /// into `acc` (allocating zero entries on first sight).
  void accumulate_gradients(GradMap& acc) const {
    for (const auto& [name, v] : bound_) {
      if (!tape_.requires_grad(v) || !tape_.has_grad(v.id)) continue;
      const Tensor g = tape_.grad(v);
      auto [it, inserted] = acc.try_emplace(name, g.rows, g.cols);
      auto& dst = it->second.data;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.data[i];
    }
  }

 private:
  ad::Tape& tape_;
  const ParamStore& store_;
  TrainablePredicate trainable_;
  std::map<std::string, ad::Var> bound_;
};

// ---------------------------------------------------------------------------
// Layers

inline void init_dense(ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                       double gain = 1.0) {
  ps[prefix + ".W"] = normal_tensor(in, out, gain * std::sqrt(1.0 / static_cast<double>(in)), rng);
  ps[prefix + ".b"] = Tensor(1, out);
}

inline ad::Var dense(Binder& b, const std::string& prefix, ad::Var x) {
  auto& t = b.tape();
  return ad::add_row(t, ad::matmul(t, x, b(prefix + ".W")), b(prefix + ".b"));
}

inline void init_layer_norm(ParamStore& ps, const std::string& prefix, std::size_t width) {
  ps[prefix + ".gamma"] = Tensor(1, width, 1.0);
  ps[prefix + ".beta"] = Tensor(1, width);
}

inline ad::Var layer_norm(Binder& b, const std::string& prefix, ad::Var x) {
  return ad::layer_norm(b.tape(), x, b(prefix + ".gamma"), b(prefix + ".beta"));
}

inline void init_feed_forward(ParamStore& ps, const std::string& prefix, std::size_t width, std::size_t hidden,
                              Rng& rng) {
  init_dense(ps, prefix + ".fc1", width, hidden, rng);
  init_dense(ps, prefix + ".fc2", hidden, width, rng);
}

inline ad::Var feed_forward(Binder& b, const std::string& prefix, ad::Var x) {
  return dense(b, prefix + ".fc2", ad::gelu(b.tape(), dense(b, prefix + ".fc1", x)));
}

/// Projections q, v, o carry biases; k does not, since a key bias shifts every
/// score of a query row equally and cancels in the softmax.
inline void init_attention(ParamStore& ps, const std::string& prefix, std::size_t width, Rng& rng) {
  for (const char* p : {".q", ".k", ".v", ".o"}) init_dense(ps, prefix + p, width, width, rng);
  ps.erase(prefix + ".k.b");
}

/// Multi-head scaled dot-product attention. Queries come from `q_in`; keys
/// and values from `kv_in`. Per-head weights are reported when requested.
inline ad::Var attention(Binder& b, const std::string& prefix, ad::Var q_in, ad::Var kv_in, std::size_t heads,
                         std::vector<ad::Var>* weights = nullptr) {
  auto& t = b.tape();
  const std::size_t width = t.value(q_in).cols;
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const std::size_t dh = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const ad::Var q = dense(b, prefix + ".q", q_in);
  const ad::Var k = ad::matmul(t, kv_in, b(prefix + ".k.W"));
  const ad::Var v = dense(b, prefix + ".v", kv_in);
  std::vector<ad::Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh, c1 = c0 + dh;
    const ad::Var qh = ad::slice_cols(t, q, c0, c1);
    const ad::Var kh = ad::slice_cols(t, k, c0, c1);
    const ad::Var vh = ad::slice_cols(t, v, c0, c1);
    const ad::Var w = ad::softmax_rows(t, ad::scale(t, ad::matmul_nt(t, qh, kh), inv_sqrt));
    if (weights) weights->push_back(w);
    outs.push_back(ad::matmul(t, w, vh));
  }
  return dense(b, prefix + ".o", ad::concat_cols(t, outs));
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  long long step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// Bias-corrected Adam update applied to every entry of `grads`. Parameters
/// without a gradient entry are not touched.
inline void adam_step(ParamStore& params, const GradMap& grads, AdamState& state, const AdamConfig& cfg = {}) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    auto pit = params.find(name);
    if (pit == params.end()) throw NotFoundError("adam_step: unknown parameter '" + name + "'");
    Tensor& p = pit->second;
    if (!p.same_shape(g)) {
      throw ShapeError("adam_step: gradient " + ad::shape_str(g) + " for parameter " + ad::shape_str(p));
    }
    auto& m = state.m.try_emplace(name, g.rows, g.cols).first->second;
    auto& v = state.v.try_emplace(name, g.rows, g.cols).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
      v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
      const double mh = m.data[i] / c1, vh = v.data[i] / c2;
      p.data[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

using LossBuilder = std::function<ad::Var(Binder&)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  std::size_t min_coordinates = 200;
  std::uint64_t seed = 0;
  /// Denominator floor for the relative error |a - n| / max(|a| + |n|, floor).
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "name[index]"
};

/// Compares tape gradients of the scalar built by `loss` against central
/// differences. All coordinates are checked when there are at most
/// `min_coordinates` of them; otherwise a seeded sample of that size that
/// includes at least one coordinate from every trainable parameter.
inline GradCheckResult finite_diff_check(const LossBuilder& loss, ParamStore params, const TrainablePredicate& trainable,
                                         const GradCheckOptions& opt = {}) {
  GradMap analytic;
  {
    ad::Tape tape;
    Binder b(tape, params, trainable);
    const ad::Var l = loss(b);
    if (!std::isfinite(tape.value(l).data.at(0))) throw NumericError("finite_diff_check: loss is not finite");
    tape.backward(l);
    b.accumulate_gradients(analytic);
  }
  auto eval = [&]() {
    ad::Tape tape;
    Binder b(tape, params);
    const double v = tape.value(loss(b)).data.at(0);
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: loss is not finite");
    return v;
  };

  std::vector<std::pair<std::string, std::size_t>> coords;
  std::vector<std::pair<std::string, std::size_t>> all;
  for (const auto& [name, t] : params) {
    if (!trainable(name)) continue;
    for (std::size_t i = 0; i < t.size(); ++i) all.emplace_back(name, i);
  }
  if (all.empty()) throw ConfigError("finite_diff_check: no trainable coordinates");
  if (all.size() <= opt.min_coordinates) {
    coords = all;
  } else {
    Rng rng(opt.seed, 0xF1D);
    std::vector<char> taken(all.size(), 0);
    std::size_t start = 0;
    while (start < all.size()) {  // one coordinate per parameter
      std::size_t end = start;
      while (end < all.size() && all[end].first == all[start].first) ++end;
      const auto pick = start + static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(end - start - 1)));
      taken[pick] = 1;
      coords.push_back(all[pick]);
      start = end;
    }
    while (coords.size() < opt.min_coordinates) {
      const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(all.size() - 1)));
      if (taken[pick]) continue;
      taken[pick] = 1;
      coords.push_back(all[pick]);
    }
  }

  GradCheckResult res;
  for (const auto& [name, i] : coords) {
    double& x = params.at(name).data[i];
    const double saved = x;
    x = saved + opt.epsilon;
    const double fp = eval();
    x = saved - opt.epsilon;
    const double fm = eval();
    x = saved;
    const double numeric = (fp - fm) / (2.0 * opt.epsilon);
    auto it = analytic.find(name);
    const double a = it == analytic.end() ? 0.0 : it->second.data[i];
    const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), opt.floor);
    if (rel > res.max_rel_error || res.worst.empty()) {
      res.max_rel_error = std::max(res.max_rel_error, rel);
      if (rel >= res.max_rel_error) res.worst = name + "[" + std::to_string(i) + "]";
    }
  }
  res.coordinates = coords.size();
  return res;
}

}  // namespace structplan
