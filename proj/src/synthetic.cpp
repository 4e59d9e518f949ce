#include <cmath>
#include <random>

#include "silo/data.hpp"
#include "silo/error.hpp"
#include "silo/rng.hpp"

namespace silo {

namespace {

void validate_common(const SynthSpec& spec) {
  if (spec.dim == 0) throw ConfigError("synthetic spec: dim must be positive");
  if (spec.clients.empty()) throw ConfigError("synthetic spec: no clients");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0))
    throw ConfigError("synthetic spec: train_fraction must be in (0, 1]");
  for (const auto& c : spec.clients) {
    if (c.size == 0) throw ConfigError("synthetic spec: client size must be at least 1");
    if (c.train_size && *c.train_size > c.size)
      throw ConfigError("synthetic spec: train_size exceeds client size");
    if (!c.shift.empty() && c.shift.size() != spec.dim)
      throw ConfigError("synthetic spec: shift length must equal dim");
    if (!(c.scale > 0.0)) throw ConfigError("synthetic spec: scale must be positive");
    if (!(c.label_skew >= 0.0 && c.label_skew < 1.0))
      throw ConfigError("synthetic spec: label_skew must be in [0, 1)");
  }
}

std::vector<double> draw_features(const SynthClientSpec& c, std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(dim);
  for (std::size_t j = 0; j < dim; ++j) x[j] = (c.shift.empty() ? 0.0 : c.shift[j]) + c.scale * normal(rng);
  return x;
}

// Random direction scaled to `norm`.
std::vector<double> draw_direction(std::size_t dim, double norm, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(dim);
  double sq = 0.0;
  for (auto& v : w) {
    v = normal(rng);
    sq += v * v;
  }
  const double s = sq > 0.0 ? norm / std::sqrt(sq) : 0.0;
  for (auto& v : w) v *= s;
  return w;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::size_t train_count(const SynthClientSpec& c, double fraction) {
  if (c.train_size) return *c.train_size;
  const auto n = static_cast<std::size_t>(std::llround(static_cast<double>(c.size) * fraction));
  return std::clamp<std::size_t>(n, 1, c.size);
}

ClientDataset split_client(std::string id, std::vector<Sample> samples, std::size_t n_train) {
  ClientDataset out;
  out.client_id = std::move(id);
  out.train.assign(std::make_move_iterator(samples.begin()),
                   std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train)));
  out.test.assign(std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train)),
                  std::make_move_iterator(samples.end()));
  return out;
}

}  // namespace

FederatedDataset gen_synthetic_classification(const SynthSpec& spec, std::uint64_t seed) {
  validate_common(spec);
  if (spec.task != TaskKind::Binary && spec.task != TaskKind::Multiclass)
    throw ConfigError("synthetic classification needs a binary or multiclass task");
  const int classes = spec.task == TaskKind::Binary ? 2 : spec.num_classes;
  if (classes < 2) throw ConfigError("synthetic spec: num_classes must be at least 2");

  Rng truth_rng(derive_seed(seed, {0}));
  // Binary: one logit; multiclass: one logit per class.
  const int logits = spec.task == TaskKind::Binary ? 1 : classes;
  std::vector<std::vector<double>> weights;
  for (int c = 0; c < logits; ++c) weights.push_back(draw_direction(spec.dim, spec.signal_strength, truth_rng));

  std::vector<ClientDataset> clients;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t k = 0; k < spec.clients.size(); ++k) {
    const auto& cs = spec.clients[k];
    const int preferred = cs.preferred_class.value_or(static_cast<int>(k % static_cast<std::size_t>(classes)));
    if (preferred < 0 || preferred >= classes) throw ConfigError("synthetic spec: preferred_class out of range");
    Rng rng(derive_seed(seed, {1, k}));
    std::vector<Sample> samples;
    samples.reserve(cs.size);
    while (samples.size() < cs.size) {
      auto x = draw_features(cs, spec.dim, rng);
      int label = 0;
      if (spec.task == TaskKind::Binary) {
        const double p = 1.0 / (1.0 + std::exp(-dot(weights[0], x)));
        label = unif(rng) < p ? 1 : 0;
      } else {
        std::vector<double> z(static_cast<std::size_t>(classes));
        double zmax = -INFINITY;
        for (int c = 0; c < classes; ++c) zmax = std::max(zmax, z[c] = dot(weights[c], x));
        double total = 0.0;
        for (auto& v : z) total += (v = std::exp(v - zmax));
        double u = unif(rng) * total;
        label = classes - 1;
        for (int c = 0; c < classes; ++c) {
          if (u < z[c]) {
            label = c;
            break;
          }
          u -= z[c];
        }
      }
      if (label != preferred && cs.label_skew > 0.0 && unif(rng) < cs.label_skew) continue;
      Sample s{std::move(x), {}};
      if (spec.task == TaskKind::Binary)
        s.label = BinaryLabel{label};
      else
        s.label = ClassLabel{label};
      samples.push_back(std::move(s));
    }
    clients.push_back(split_client("client_" + std::to_string(k), std::move(samples),
                                   train_count(cs, spec.train_fraction)));
  }
  TaskInfo task{spec.task, classes, 0};
  return FederatedDataset(task, spec.dim, std::move(clients));
}

double solve_censoring_rate(const std::vector<double>& hazards, double target) {
  if (!(target >= 0.0 && target < 1.0)) throw ConfigError("censoring rate must be in [0, 1)");
  if (target == 0.0 || hazards.empty()) return 0.0;
  auto censored_fraction = [&](double c) {
    double s = 0.0;
    for (double h : hazards) s += c / (c + h);
    return s / static_cast<double>(hazards.size());
  };
  const auto [lo_it, hi_it] = std::minmax_element(hazards.begin(), hazards.end());
  double lo = std::log(*lo_it) - 30.0;
  double hi = std::log(*hi_it) + 30.0;
  for (int it = 0; it < 20; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (censored_fraction(std::exp(mid)) < target)
      lo = mid;
    else
      hi = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

FederatedDataset gen_synthetic_survival(const SynthSpec& spec, std::uint64_t seed) {
  validate_common(spec);
  if (spec.task != TaskKind::Survival) throw ConfigError("synthetic survival needs a survival task");
  const auto& sv = spec.survival;
  if (!(sv.censoring_rate >= 0.0 && sv.censoring_rate < 1.0))
    throw ConfigError("censoring rate must be in [0, 1)");
  if (!(sv.baseline_hazard > 0.0)) throw ConfigError("baseline hazard must be positive");
  if (!sv.coefficients.empty() && sv.coefficients.size() != spec.dim)
    throw ConfigError("survival coefficients must have length dim");
  const std::vector<double> beta = sv.coefficients.empty() ? std::vector<double>(spec.dim, 0.0) : sv.coefficients;

  // Features first, so the censoring rate can be tuned on the realised hazards.
  std::vector<std::vector<std::vector<double>>> features(spec.clients.size());
  std::vector<double> hazards;
  for (std::size_t k = 0; k < spec.clients.size(); ++k) {
    Rng rng(derive_seed(seed, {1, k}));
    for (std::size_t i = 0; i < spec.clients[k].size; ++i) {
      features[k].push_back(draw_features(spec.clients[k], spec.dim, rng));
      hazards.push_back(sv.baseline_hazard * std::exp(dot(beta, features[k].back())));
    }
  }
  const double censor = solve_censoring_rate(hazards, sv.censoring_rate);

  std::vector<ClientDataset> clients;
  std::size_t h = 0;
  for (std::size_t k = 0; k < spec.clients.size(); ++k) {
    Rng rng(derive_seed(seed, {2, k}));
    std::vector<Sample> samples;
    for (auto& x : features[k]) {
      const double event_time = std::exponential_distribution<double>(hazards[h++])(rng);
      double time = event_time;
      bool event = true;
      if (censor > 0.0) {
        const double censor_time = std::exponential_distribution<double>(censor)(rng);
        if (censor_time < event_time) {
          time = censor_time;
          event = false;
        }
      }
      // Guard against a zero draw; survival times must be positive.
      if (!(time > 0.0)) time = std::numeric_limits<double>::min();
      samples.push_back(Sample{std::move(x), SurvivalLabel{time, event}});
    }
    clients.push_back(split_client("client_" + std::to_string(k), std::move(samples),
                                   train_count(spec.clients[k], spec.train_fraction)));
  }
  return FederatedDataset(TaskInfo{TaskKind::Survival, 2, 0}, spec.dim, std::move(clients));
}

FederatedDataset gen_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  switch (spec.task) {
    case TaskKind::Binary:
    case TaskKind::Multiclass: return gen_synthetic_classification(spec, seed);
    case TaskKind::Survival: return gen_synthetic_survival(spec, seed);
    case TaskKind::Mask: break;
  }
  throw ConfigError("no synthetic generator for mask tasks");
}

}  // namespace silo
