#include "silo/data.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "silo/error.hpp"
#include "silo/rng.hpp"

namespace silo {

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Binary: return "binary";
    case TaskKind::Multiclass: return "multiclass";
    case TaskKind::Survival: return "survival";
    case TaskKind::Mask: return "mask";
  }
  return "?";
}

int class_of(const Sample& s) {
  if (const auto* b = std::get_if<BinaryLabel>(&s.label)) return b->value;
  if (const auto* c = std::get_if<ClassLabel>(&s.label)) return c->index;
  throw Error("sample has no class label");
}

const SurvivalLabel& survival_of(const Sample& s) {
  if (const auto* l = std::get_if<SurvivalLabel>(&s.label)) return *l;
  throw Error("sample has no survival label");
}

void check_sample(const Sample& s, const TaskInfo& task, std::size_t dim) {
  if (s.features.size() != dim) {
    throw ConfigError("feature dimension " + std::to_string(s.features.size()) +
                      " does not match dataset dimension " + std::to_string(dim));
  }
  switch (task.kind) {
    case TaskKind::Binary: {
      const auto* l = std::get_if<BinaryLabel>(&s.label);
      if (!l || (l->value != 0 && l->value != 1)) throw ConfigError("expected a 0/1 label");
      break;
    }
    case TaskKind::Multiclass: {
      const auto* l = std::get_if<ClassLabel>(&s.label);
      if (!l || l->index < 0 || l->index >= task.num_classes)
        throw ConfigError("expected a class index below " + std::to_string(task.num_classes));
      break;
    }
    case TaskKind::Survival: {
      const auto* l = std::get_if<SurvivalLabel>(&s.label);
      if (!l || !(l->time > 0.0) || !std::isfinite(l->time))
        throw ConfigError("expected a survival label with positive time");
      break;
    }
    case TaskKind::Mask: {
      const auto* l = std::get_if<MaskLabel>(&s.label);
      if (!l || static_cast<int>(l->bits.size()) != task.mask_length)
        throw ConfigError("expected a mask of length " + std::to_string(task.mask_length));
      for (auto b : l->bits)
        if (b > 1) throw ConfigError("mask entries must be 0/1");
      break;
    }
  }
}

FederatedDataset::FederatedDataset(TaskInfo task, std::size_t dim, std::vector<ClientDataset> clients)
    : task_(task), dim_(dim), clients_(std::move(clients)) {
  if (clients_.empty()) throw ConfigError("no clients");
  if (dim_ == 0) throw ConfigError("feature dimension must be positive");
  if (task_.kind == TaskKind::Binary) task_.num_classes = 2;
  if (task_.kind == TaskKind::Multiclass && task_.num_classes < 2)
    throw ConfigError("multiclass task needs at least 2 classes");
  if (task_.kind == TaskKind::Mask && task_.mask_length < 1)
    throw ConfigError("mask task needs a positive mask length");
  for (const auto& c : clients_) {
    for (const auto& s : c.train) check_sample(s, task_, dim_);
    for (const auto& s : c.test) check_sample(s, task_, dim_);
  }
}

std::size_t FederatedDataset::total_train() const noexcept {
  std::size_t n = 0;
  for (const auto& c : clients_) n += c.train.size();
  return n;
}

std::size_t FederatedDataset::total_test() const noexcept {
  std::size_t n = 0;
  for (const auto& c : clients_) n += c.test.size();
  return n;
}

std::vector<std::size_t> FederatedDataset::train_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.reserve(clients_.size());
  for (const auto& c : clients_) sizes.push_back(c.train.size());
  return sizes;
}

ClientDataset pooled_view(const FederatedDataset& fed) {
  ClientDataset pooled;
  pooled.client_id = fed.num_clients() == 1 ? fed.client(0).client_id : "pooled";
  pooled.train.reserve(fed.total_train());
  pooled.test.reserve(fed.total_test());
  for (const auto& c : fed.clients()) {
    pooled.train.insert(pooled.train.end(), c.train.begin(), c.train.end());
    pooled.test.insert(pooled.test.end(), c.test.begin(), c.test.end());
  }
  return pooled;
}

namespace {

std::vector<double> draw_dirichlet(std::size_t k, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (auto& v : p) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0.0) {
    // Every gamma draw underflowed (tiny alpha): put all mass on one client.
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    std::fill(p.begin(), p.end(), 0.0);
    p[pick(rng)] = 1.0;
    return p;
  }
  for (auto& v : p) v /= total;
  return p;
}

std::size_t draw_categorical(const std::vector<double>& cdf, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  for (std::size_t i = 0; i + 1 < cdf.size(); ++i)
    if (x < cdf[i]) return i;
  return cdf.size() - 1;
}

}  // namespace

ResplitResult dirichlet_resplit(const FederatedDataset& fed, const DirichletSplitConfig& cfg) {
  if (cfg.k_prime < 1) throw ConfigError("k_prime must be at least 1");
  if (!(cfg.alpha > 0.0) || !std::isfinite(cfg.alpha)) throw ConfigError("alpha must be positive");

  std::vector<std::string> warnings;
  if (cfg.alpha < kRecommendedMinAlpha) {
    warnings.push_back("dirichlet alpha " + format_double(cfg.alpha) +
                       " is below the recommended minimum 0.5; empty clients are likely");
  }

  Rng rng(cfg.seed);
  std::vector<ClientDataset> out(cfg.k_prime);
  for (std::size_t j = 0; j < cfg.k_prime; ++j) out[j].client_id = "client_" + std::to_string(j);

  std::vector<std::vector<double>> proportions;
  proportions.reserve(fed.num_clients());
  for (const auto& client : fed.clients()) {
    auto p = draw_dirichlet(cfg.k_prime, cfg.alpha, rng);
    std::vector<double> cdf(p.size());
    std::partial_sum(p.begin(), p.end(), cdf.begin());
    for (const auto& s : client.train) out[draw_categorical(cdf, rng)].train.push_back(s);
    for (const auto& s : client.test) out[draw_categorical(cdf, rng)].test.push_back(s);
    proportions.push_back(std::move(p));
  }

  for (const auto& c : out) {
    if (c.train.empty() || c.test.empty()) {
      warnings.push_back(c.client_id + " received no " + (c.train.empty() ? "train" : "test") +
                         " samples");
    }
  }
  return {FederatedDataset(fed.task(), fed.dim(), std::move(out)), std::move(proportions),
          std::move(warnings)};
}

}  // namespace silo
