#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "silo/assignment.hpp"
#include "silo/error.hpp"
#include "silo/heterogeneity.hpp"
#include "silo/rng.hpp"

using namespace silo;

namespace {

Eigen::MatrixXd gaussian_cloud(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d, double shift = 0.0) {
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = N(rng) + (j == 0 ? shift : 0.0);
  return m;
}

// Clients of standard Gaussian features shifted along the first axis.
FederatedDataset shifted_clients(std::uint64_t seed, const std::vector<double>& shifts, std::size_t n, std::size_t d) {
  std::mt19937_64 rng(seed);
  std::vector<ClientDataset> clients;
  for (std::size_t k = 0; k < shifts.size(); ++k) {
    ClientDataset c;
    c.client_id = "s" + std::to_string(k);
    const auto m = gaussian_cloud(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d), shifts[k]);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<double> x(d);
      for (std::size_t j = 0; j < d; ++j) x[j] = m(i, static_cast<Eigen::Index>(j));
      (i % 5 == 0 ? c.test : c.train).push_back(fixture::binary_sample(std::move(x), static_cast<int>(i % 2)));
    }
    clients.push_back(std::move(c));
  }
  return FederatedDataset({TaskKind::Binary, 2, 0}, d, std::move(clients));
}

}  // namespace

TEST_CASE("client entropy") {
  const std::vector<std::size_t> heart{303, 261, 46, 130}, tcga{311, 196, 206, 162, 162, 51};
  CHECK(std::abs(client_entropy(heart) - 1.75) <= 0.01);
  CHECK(std::abs(client_entropy(tcga) - 2.44) <= 0.01);
  CHECK(client_entropy(std::vector<std::size_t>{7, 7, 7, 7}) == 2.0);
  CHECK(client_entropy(std::vector<std::size_t>{9}) == 0.0);
  CHECK_THROWS(client_entropy(std::vector<std::size_t>{}));
}

TEST_CASE("assignment solver equals permutation brute force") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> M(1, 6), D(1, 4);
  for (int it = 0; it < 200; ++it) {
    const int m = M(rng), d = D(rng);
    const auto a = gaussian_cloud(rng, m, d), b = gaussian_cloud(rng, m, d, 0.7);
    CHECK(exact_assignment_w2(a, b) == doctest::Approx(oracle::w2_bruteforce(a, b)).epsilon(1e-12));
  }
  // Integer costs with many ties.
  Eigen::MatrixXd cost(4, 4);
  cost << 4, 1, 3, 2, 2, 0, 5, 3, 3, 2, 2, 2, 4, 3, 1, 4;
  const auto sol = solve_assignment(cost);
  std::vector<int> perm{0, 1, 2, 3};
  double best = 1e300;
  do {
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += cost(i, perm[static_cast<std::size_t>(i)]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(sol.cost == best);
  double check = 0.0;
  for (int i = 0; i < 4; ++i) check += cost(i, sol.row_to_col[static_cast<std::size_t>(i)]);
  CHECK(check == sol.cost);
}

TEST_CASE("exact W2 basics") {
  std::mt19937_64 rng(32);
  const auto a = gaussian_cloud(rng, 5, 3);
  CHECK(exact_assignment_w2(a, a) == 0.0);
  Eigen::MatrixXd x(1, 2), y(1, 2);
  x << 1.0, 2.0;
  y << -2.0, 6.0;
  CHECK(exact_assignment_w2(x, y) == 25.0);
  CHECK_THROWS(exact_assignment_w2(a, gaussian_cloud(rng, 4, 3)));
}

TEST_CASE("minibatch W2") {
  std::mt19937_64 rng(33);
  const auto a = gaussian_cloud(rng, 100, 2);
  MinibatchW2Options opt{16, 10, 5, true};
  CHECK(minibatch_w2(a, a, opt) == 0.0);

  Eigen::MatrixXd px = Eigen::MatrixXd::Constant(30, 2, 1.0), py = Eigen::MatrixXd::Constant(40, 2, -1.0);
  opt = {8, 7, 1, false};
  CHECK(minibatch_w2(px, py, opt) == doctest::Approx(8.0).epsilon(1e-14));

  opt.batch = 31;
  CHECK_THROWS(minibatch_w2(px, py, opt));

  // Shifted Gaussian: the estimate is at least |delta|^2 and close to a
  // ten-times-longer run of itself.
  const auto base = gaussian_cloud(rng, 1000, 2), shifted = gaussian_cloud(rng, 1000, 2, 2.0);
  const double est = minibatch_w2(base, shifted, {64, 50, 9, false});
  const double ref = minibatch_w2(base, shifted, {64, 500, 10, false});
  CHECK(est >= 4.0);
  CHECK(std::abs(est - ref) <= 0.2 * ref);
}

TEST_CASE("total variation") {
  const std::vector<double> a{0.5, 0.5}, b{1.0, 0.0}, c{0.0, 1.0};
  CHECK(total_variation(a, a) == 0.0);
  CHECK(total_variation(a, b) == 0.5);
  CHECK(total_variation(b, c) == 1.0);
  CHECK_THROWS(total_variation(a, std::vector<double>{0.7, 0.7}));
  CHECK_THROWS(total_variation(a, std::vector<double>{1.0}));
}

TEST_CASE("PCA") {
  std::mt19937_64 rng(34);
  std::normal_distribution<double> N(0.0, 1.0);
  // Points on a line in 20-D.
  Eigen::VectorXd dir = Eigen::VectorXd::Zero(20);
  dir[3] = 3.0;
  dir[11] = -4.0;
  dir.normalize();
  Eigen::MatrixXd line(50, 20);
  for (int i = 0; i < 50; ++i) line.row(i) = (2.0 + N(rng)) * dir.transpose();
  const auto pca = pca_fit(line);
  REQUIRE(pca.components.rows() == 1);
  const auto proj = pca_transform(pca, line);
  const Eigen::MatrixXd back = (proj * pca.components).rowwise() + pca.mean.transpose();
  CHECK((back - line).norm() < 1e-8);
  CHECK(std::abs(std::abs(pca.components.row(0).dot(dir.transpose())) - 1.0) < 1e-12);
  // Sign convention: first non-negligible coordinate positive.
  CHECK(pca.components(0, 3) > 0.0);

  const auto full = gaussian_cloud(rng, 200, 30);
  const auto p16 = pca_fit(full);
  CHECK(p16.components.rows() == 16);
  const Eigen::MatrixXd gram = p16.components * p16.components.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(16, 16)).norm() < 1e-10);
  for (Eigen::Index i = 1; i < 16; ++i) CHECK(p16.explained_variance[i] <= p16.explained_variance[i - 1]);
}

TEST_CASE("16-dim features bypass PCA") {
  // Oracle: minibatch W2 on the raw stacked features with the per-pair seed.
  auto raw = [](const FederatedDataset& fed, std::size_t k) {
    const auto samples = client_samples(fed)[k];
    Eigen::MatrixXd m(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(fed.dim()));
    for (std::size_t i = 0; i < samples.size(); ++i)
      for (std::size_t j = 0; j < fed.dim(); ++j)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i].features[j];
    return m;
  };
  const MinibatchW2Options opt{16, 3, derive_seed(3, {0, 1}), false};

  const auto fed16 = shifted_clients(35, {0.0, 1.0}, 40, 16);
  const auto dm16 = pairwise_distance_matrix(fed16, DistanceOn::Features, 3, {16, 3});
  CHECK(dm16.values(0, 1) == minibatch_w2(raw(fed16, 0), raw(fed16, 1), opt));
  CHECK(dm16.values(1, 0) == dm16.values(0, 1));
  CHECK(dm16.values(0, 0) == 0.0);

  const auto fed17 = shifted_clients(35, {0.0, 1.0}, 40, 17);
  const auto dm17 = pairwise_distance_matrix(fed17, DistanceOn::Features, 3, {16, 3});
  CHECK(dm17.values(0, 1) != minibatch_w2(raw(fed17, 0), raw(fed17, 1), opt));
}

TEST_CASE("label distances use total variation") {
  ClientDataset a{"a", {fixture::binary_sample({0.0}, 0), fixture::binary_sample({1.0}, 0)}, {}};
  ClientDataset b{"b", {fixture::binary_sample({0.0}, 1)}, {fixture::binary_sample({1.0}, 1)}};
  const FederatedDataset fed({TaskKind::Binary, 2, 0}, 1, {a, b});
  const auto dm = pairwise_distance_matrix(fed, DistanceOn::Labels, 0);
  CHECK(dm.metric == "tv");
  CHECK(dm.values(0, 1) == 1.0);
  CHECK(dm.values(1, 0) == 1.0);
}

TEST_CASE("feature distances grow with shift") {
  const auto fed = shifted_clients(36, {0.0, 1.0, 3.0}, 150, 4);
  const auto dm = pairwise_distance_matrix(fed, DistanceOn::Features, 1, {32, 20});
  CHECK(dm.values(0, 2) > dm.values(0, 1));
  CHECK(dm.values(1, 2) > dm.values(0, 1));
}

TEST_CASE("i.i.d. rescaling") {
  const auto fed = shifted_clients(37, {0.0, 0.5, 1.0, 4.0, 0.0}, 120, 3);
  const auto natural = pairwise_distance_matrix(fed, DistanceOn::Features, 2, {32, 10});
  const auto iid = iid_baseline_matrix(fed, DistanceOn::Features, 2, {32, 10});
  const auto r = rescale_against_iid(natural, iid);
  CHECK(r.natural.rescaled);
  const auto off = r.iid.off_diagonal();
  REQUIRE(off.size() == 10);
  const double mean = std::accumulate(off.begin(), off.end(), 0.0) / 10.0;
  double var = 0.0;
  for (double v : off) var += (v - mean) * (v - mean);
  var /= 10.0;
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(var - 1.0) < 1e-9);
  // The shift-4 client sits far outside the i.i.d. spread.
  CHECK(r.natural.values(0, 3) > 10.0);

  // natural == iid standardizes itself.
  const auto self = rescale_against_iid(iid, iid);
  const auto soff = self.natural.off_diagonal();
  const double smean = std::accumulate(soff.begin(), soff.end(), 0.0) / static_cast<double>(soff.size());
  CHECK(std::abs(smean) < 1e-9);

  DistanceMatrix flat = iid;
  flat.values.setConstant(2.0);
  flat.values.diagonal().setZero();
  CHECK_THROWS_AS(rescale_against_iid(natural, flat), DegenerateBaselineError);

  const auto two = shifted_clients(38, {0.0, 1.0}, 50, 2);
  const auto d2 = pairwise_distance_matrix(two, DistanceOn::Features, 0, {16, 4});
  CHECK_THROWS_AS(rescale_against_iid(d2, d2), DegenerateBaselineError);
}

TEST_CASE("duplicated client sits below the i.i.d. baseline mean") {
  auto base = shifted_clients(39, {0.0, 2.0, -2.0}, 100, 3);
  auto clients = base.clients();
  auto dup = clients[0];
  dup.client_id = "dup";
  clients.push_back(dup);
  const FederatedDataset fed(base.task(), base.dim(), clients);
  const auto natural = pairwise_distance_matrix(fed, DistanceOn::Features, 4, {32, 20});
  const auto iid = iid_baseline_matrix(fed, DistanceOn::Features, 4, {32, 20});
  const auto off = iid.off_diagonal();
  const double iid_mean = std::accumulate(off.begin(), off.end(), 0.0) / static_cast<double>(off.size());
  CHECK(natural.values(0, 3) < iid_mean);
}

TEST_CASE("i.i.d. redistribution keeps sizes and samples") {
  const auto fed = shifted_clients(40, {0.0, 1.0, 2.0}, 30, 2);
  const auto iid = iid_redistribute(fed, 7);
  REQUIRE(iid.num_clients() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(iid.client(k).train.size() == fed.client(k).train.size());
    CHECK(iid.client(k).test.size() == fed.client(k).test.size());
  }
  auto key = [](const Sample& s) { return s.features; };
  std::vector<std::vector<double>> before, after;
  for (const auto& c : client_samples(fed))
    for (const auto& s : c) before.push_back(key(s));
  for (const auto& c : client_samples(iid))
    for (const auto& s : c) after.push_back(key(s));
  std::sort(before.begin(), before.end());
  std::sort(after.begin(), after.end());
  CHECK(before == after);
}

TEST_CASE("distance matrix csv") {
  const auto fed = shifted_clients(41, {0.0, 1.0}, 20, 2);
  const auto dm = pairwise_distance_matrix(fed, DistanceOn::Features, 0, {8, 3});
  const std::vector<std::string> ids{"s0", "s1"};
  const auto csv = distance_matrix_csv(dm, ids);
  CHECK(csv.rfind("# kind=natural rescaled=false metric=w2sq\nclient,size,s0,s1\n", 0) == 0);
}
