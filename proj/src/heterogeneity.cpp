#include "silo/heterogeneity.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "silo/assignment.hpp"
#include "silo/error.hpp"
#include "silo/rng.hpp"

namespace silo {

double client_entropy(std::span<const std::size_t> sizes) {
  if (sizes.empty()) throw ConfigError("entropy: empty size list");
  double total = 0.0;
  for (auto n : sizes) {
    if (n == 0) throw ConfigError("entropy: client sizes must be at least 1");
    total += static_cast<double>(n);
  }
  double h = 0.0;
  for (auto n : sizes) {
    const double p = static_cast<double>(n) / total;
    h -= p * std::log2(p);
  }
  return h;
}

PcaModel pca_fit(const Eigen::MatrixXd& data, std::size_t target_dim) {
  if (data.rows() < 2) throw ConfigError("pca: needs at least 2 samples");
  PcaModel model;
  model.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(data.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("pca: eigendecomposition failed");

  // Eigen returns ascending eigenvalues.
  const Eigen::VectorXd values = eig.eigenvalues().reverse();
  const Eigen::MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
  const double top = std::max(values[0], 0.0);
  const double tol = top * 1e-10 * static_cast<double>(data.cols());
  Eigen::Index keep = 0;
  while (keep < values.size() && static_cast<std::size_t>(keep) < target_dim && values[keep] > tol) ++keep;

  model.components.resize(keep, data.cols());
  model.explained_variance = values.head(keep);
  for (Eigen::Index r = 0; r < keep; ++r) {
    Eigen::VectorXd dir = vectors.col(r);
    const double cutoff = 1e-12 * dir.cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < dir.size(); ++j) {
      if (std::abs(dir[j]) > cutoff) {
        if (dir[j] < 0) dir = -dir;
        break;
      }
    }
    model.components.row(r) = dir.transpose();
  }
  return model;
}

Eigen::MatrixXd pca_transform(const PcaModel& model, const Eigen::MatrixXd& data) {
  if (data.cols() != model.mean.size()) throw ConfigError("pca: dimension mismatch");
  return (data.rowwise() - model.mean.transpose()) * model.components.transpose();
}

double exact_assignment_w2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("w2: point sets must have equal shape");
  if (a.rows() == 0) throw ConfigError("w2: empty point sets");
  const Eigen::Index m = a.rows();
  Eigen::MatrixXd cost(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) cost(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  return solve_assignment(cost).cost / static_cast<double>(m);
}

namespace {

// First `m` entries of a partial Fisher-Yates shuffle of 0..n-1.
std::vector<Eigen::Index> draw_subset(Eigen::Index n, std::size_t m, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(m);
  return idx;
}

}  // namespace

double minibatch_w2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const MinibatchW2Options& options) {
  if (a.cols() != b.cols()) throw ConfigError("minibatch w2: dimension mismatch");
  if (options.batch < 1 || options.repetitions < 1) throw ConfigError("minibatch w2: batch and repetitions >= 1");
  if (static_cast<std::size_t>(a.rows()) < options.batch || static_cast<std::size_t>(b.rows()) < options.batch)
    throw ConfigError("minibatch w2: batch size " + std::to_string(options.batch) + " exceeds a client's size");
  const auto m = static_cast<Eigen::Index>(options.batch);
  Eigen::MatrixXd sa(m, a.cols()), sb(m, b.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < options.repetitions; ++r) {
    Rng rng_a(derive_seed(options.seed, {r, 0}));
    Rng rng_b(derive_seed(options.seed, {r, options.shared_draws ? 0u : 1u}));
    const auto ia = draw_subset(a.rows(), options.batch, rng_a);
    const auto ib = draw_subset(b.rows(), options.batch, rng_b);
    for (Eigen::Index i = 0; i < m; ++i) {
      sa.row(i) = a.row(ia[static_cast<std::size_t>(i)]);
      sb.row(i) = b.row(ib[static_cast<std::size_t>(i)]);
    }
    total += exact_assignment_w2(sa, sb);
  }
  return total / static_cast<double>(options.repetitions);
}

double total_variation(std::span<const double> alpha, std::span<const double> beta) {
  if (alpha.size() != beta.size()) throw ConfigError("tv: length mismatch");
  auto check = [](std::span<const double> p) {
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw ConfigError("tv: negative probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("tv: probabilities do not sum to 1");
  };
  check(alpha);
  check(beta);
  double s = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) s += std::abs(alpha[i] - beta[i]);
  return 0.5 * s;
}

std::vector<double> DistanceMatrix::off_diagonal() const {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    for (Eigen::Index j = i + 1; j < values.cols(); ++j) out.push_back(values(i, j));
  return out;
}

std::vector<std::vector<Sample>> client_samples(const FederatedDataset& fed) {
  std::vector<std::vector<Sample>> out;
  for (const auto& c : fed.clients()) {
    auto& v = out.emplace_back(c.train);
    v.insert(v.end(), c.test.begin(), c.test.end());
  }
  return out;
}

namespace {

// One row per sample: the representation compared between clients.
using Embedding = std::vector<Eigen::MatrixXd>;
using RowRef = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

Eigen::MatrixXd stack(const std::vector<Sample>& samples, std::size_t dim,
                      const std::function<void(const Sample&, RowRef)>& fill) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < samples.size(); ++i) fill(samples[i], m.row(static_cast<Eigen::Index>(i)));
  return m;
}

// Applies the d > 16 PCA rule with PCA fit on the pooled rows.
Embedding reduce_if_wide(Embedding per_client) {
  const auto d = per_client.front().cols();
  if (static_cast<std::size_t>(d) <= kPcaTargetDim) return per_client;
  Eigen::Index total = 0;
  for (const auto& m : per_client) total += m.rows();
  Eigen::MatrixXd pooled(total, d);
  Eigen::Index row = 0;
  for (const auto& m : per_client) {
    pooled.middleRows(row, m.rows()) = m;
    row += m.rows();
  }
  const auto pca = pca_fit(pooled, kPcaTargetDim);
  for (auto& m : per_client) m = pca_transform(pca, m);
  return per_client;
}

Embedding embed(const std::vector<std::vector<Sample>>& clients, const FederatedDataset& fed, DistanceOn on) {
  Embedding out;
  if (on == DistanceOn::Features) {
    for (const auto& c : clients)
      out.push_back(stack(c, fed.dim(), [](const Sample& s, RowRef r) {
        for (std::size_t j = 0; j < s.features.size(); ++j) r[static_cast<Eigen::Index>(j)] = s.features[j];
      }));
    return reduce_if_wide(std::move(out));
  }
  if (fed.task().kind == TaskKind::Survival) {
    for (const auto& c : clients)
      out.push_back(stack(c, 2, [](const Sample& s, RowRef r) {
        r[0] = survival_of(s).time;
        r[1] = survival_of(s).event ? 1.0 : 0.0;
      }));
    // Standardize each coordinate over the pooled samples.
    Eigen::RowVector2d mean = Eigen::RowVector2d::Zero(), sq = Eigen::RowVector2d::Zero();
    double n = 0.0;
    for (const auto& m : out) {
      mean += m.colwise().sum();
      sq += m.array().square().matrix().colwise().sum();
      n += static_cast<double>(m.rows());
    }
    mean /= n;
    Eigen::RowVector2d sd = (sq / n - mean.array().square().matrix()).cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index j = 0; j < 2; ++j)
      if (!(sd[j] > 0.0)) sd[j] = 1.0;
    for (auto& m : out) m = ((m.rowwise() - mean).array().rowwise() / sd.array()).matrix();
    return out;
  }
  // Mask labels.
  const auto len = static_cast<std::size_t>(fed.task().mask_length);
  for (const auto& c : clients)
    out.push_back(stack(c, len, [](const Sample& s, RowRef r) {
      const auto& bits = std::get<MaskLabel>(s.label).bits;
      for (std::size_t j = 0; j < bits.size(); ++j) r[static_cast<Eigen::Index>(j)] = bits[j];
    }));
  return reduce_if_wide(std::move(out));
}

std::vector<double> label_histogram(const std::vector<Sample>& samples, int classes) {
  if (samples.empty()) throw ConfigError("tv: client has no samples");
  std::vector<double> h(static_cast<std::size_t>(classes), 0.0);
  for (const auto& s : samples) h[static_cast<std::size_t>(class_of(s))] += 1.0;
  for (auto& v : h) v /= static_cast<double>(samples.size());
  return h;
}

DistanceMatrix distances_of(const std::vector<std::vector<Sample>>& clients, const FederatedDataset& fed,
                            DistanceOn on, std::uint64_t seed, const DistanceOptions& options, SplitKind kind) {
  const auto k = static_cast<Eigen::Index>(clients.size());
  DistanceMatrix out;
  out.kind = kind;
  out.values = Eigen::MatrixXd::Zero(k, k);
  for (const auto& c : clients) out.sizes.push_back(c.size());

  const bool discrete = on == DistanceOn::Labels &&
                        (fed.task().kind == TaskKind::Binary || fed.task().kind == TaskKind::Multiclass);
  if (discrete) {
    out.metric = "tv";
    std::vector<std::vector<double>> hist;
    for (const auto& c : clients) hist.push_back(label_histogram(c, fed.task().num_classes));
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = i + 1; j < k; ++j)
        out.values(i, j) = out.values(j, i) =
            total_variation(hist[static_cast<std::size_t>(i)], hist[static_cast<std::size_t>(j)]);
    return out;
  }

  const auto points = embed(clients, fed, on);
  const std::size_t smallest = *std::min_element(out.sizes.begin(), out.sizes.end());
  if (smallest == 0) throw ConfigError("w2: a client has no samples");
  MinibatchW2Options mb;
  mb.batch = std::min(options.batch, smallest);
  mb.repetitions = options.repetitions;
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i + 1; j < k; ++j) {
      mb.seed = derive_seed(seed, {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)});
      out.values(i, j) = out.values(j, i) =
          minibatch_w2(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)], mb);
    }
  }
  return out;
}

}  // namespace

DistanceMatrix pairwise_distance_matrix(const FederatedDataset& fed, DistanceOn on, std::uint64_t seed,
                                        const DistanceOptions& options) {
  return distances_of(client_samples(fed), fed, on, seed, options, SplitKind::Natural);
}

FederatedDataset iid_redistribute(const FederatedDataset& fed, std::uint64_t seed) {
  std::vector<Sample> pool;
  for (const auto& c : fed.clients()) {
    pool.insert(pool.end(), c.train.begin(), c.train.end());
    pool.insert(pool.end(), c.test.begin(), c.test.end());
  }
  Rng rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<ClientDataset> clients;
  auto it = pool.begin();
  for (const auto& c : fed.clients()) {
    ClientDataset out{c.client_id, {}, {}};
    out.train.assign(it, it + static_cast<std::ptrdiff_t>(c.train.size()));
    it += static_cast<std::ptrdiff_t>(c.train.size());
    out.test.assign(it, it + static_cast<std::ptrdiff_t>(c.test.size()));
    it += static_cast<std::ptrdiff_t>(c.test.size());
    clients.push_back(std::move(out));
  }
  return FederatedDataset(fed.task(), fed.dim(), std::move(clients));
}

DistanceMatrix iid_baseline_matrix(const FederatedDataset& fed, DistanceOn on, std::uint64_t seed,
                                   const DistanceOptions& options) {
  const auto iid = iid_redistribute(fed, derive_seed(seed, {0x696964}));
  return distances_of(client_samples(iid), iid, on, seed, options, SplitKind::IidBaseline);
}

RescaledPair rescale_against_iid(const DistanceMatrix& natural, const DistanceMatrix& iid) {
  if (natural.values.rows() != iid.values.rows() || natural.values.cols() != iid.values.cols())
    throw ConfigError("rescale: matrix shapes differ");
  if (iid.values.rows() < 3) throw DegenerateBaselineError("rescale: needs at least 3 clients");
  const auto base = iid.off_diagonal();
  const double n = static_cast<double>(base.size());
  const double mean = std::accumulate(base.begin(), base.end(), 0.0) / n;
  double var = 0.0;
  for (double v : base) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (sd < 1e-12) throw DegenerateBaselineError("rescale: i.i.d. distances have zero spread");

  auto apply = [&](const DistanceMatrix& m) {
    DistanceMatrix out = m;
    out.values = (m.values.array() - mean) / sd;
    out.rescaled = true;
    return out;
  };
  return {apply(natural), apply(iid), mean, sd};
}

std::string distance_matrix_csv(const DistanceMatrix& m, std::span<const std::string> client_ids) {
  std::string out = "# kind=";
  out += m.kind == SplitKind::Natural ? "natural" : "iid";
  out += " rescaled=";
  out += m.rescaled ? "true" : "false";
  out += " metric=" + m.metric + "\n";
  out += "client,size";
  for (const auto& id : client_ids) out += "," + id;
  out += '\n';
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    out += client_ids[static_cast<std::size_t>(i)] + "," + std::to_string(m.sizes[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < m.values.cols(); ++j) out += "," + format_double(m.values(i, j));
    out += '\n';
  }
  return out;
}

}  // namespace silo
