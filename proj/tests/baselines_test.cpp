#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "helpers.hpp"
#include "trip/baselines.hpp"
#include "trip/data.hpp"
#include "trip/message.hpp"

using namespace trip;

namespace {

FederationConfig base_cfg(std::size_t k, int rank, int max_iter,
                          double tol = 1e-6) {
  FederationConfig cfg;
  cfg.k = k;
  cfg.time_mode = FederationConfig::TimeMode::modeled;
  cfg.trip.rank = rank;
  cfg.trip.lambda = 0.0;
  cfg.trip.omega = 10.0;
  cfg.trip.mu = 1.0;
  cfg.trip.max_iter = max_iter;
  cfg.trip.tol = tol;
  return cfg;
}

SyntheticTensor synth(const std::vector<std::size_t>& shape, int rank,
                      double noise_sd, std::uint64_t seed,
                      bool quantize = true) {
  SyntheticSpec spec;
  spec.shape = shape;
  spec.rank = rank;
  spec.noise_sd = noise_sd;
  spec.quantize = quantize;
  spec.seed = seed;
  return synthesize_tensor(spec);
}

}  // namespace

TEST_CASE("the pooled baseline nails a noiseless rank-one tensor") {
  const SyntheticTensor s = synth({5, 4, 3}, 1, 0.0, 21, /*quantize=*/false);
  FederationConfig cfg = base_cfg(1, 1, 200, 1e-10);
  const CentralResult r = run_central(s.tensor, cfg);
  CHECK(r.trace.final_rmse() <= 1e-3);
  CHECK(rmse(r.model, s.tensor) <= 1e-3);
}

TEST_CASE("an all-zero tensor is fit exactly and instantly") {
  const SparseTensor zero({4, 3, 2}, {}, {});
  FederationConfig cfg = base_cfg(1, 2, 50);
  const CentralResult r = run_central(zero, cfg);

  CHECK(r.trace.converged);
  CHECK(r.trace.iterations.size() == 2);  // the gate needs two looks
  for (const auto& it : r.trace.iterations) {
    CHECK(it.objective == 0.0);
    CHECK(it.fit_sum_squares == 0.0);
    CHECK(it.residual < 1e-10);
  }
  CHECK(r.trace.final_rmse() == 0.0);
  CHECK(r.timing.bytes_to_server == 0);  // no entries, no upload
  CHECK(r.timing.communication_seconds == 0.0);
}

TEST_CASE("the pooled baseline is deterministic") {
  const SyntheticTensor s = synth({12, 7, 5}, 2, 0.1, 33);
  FederationConfig cfg = base_cfg(1, 2, 30);
  const CentralResult a = run_central(s.tensor, cfg);
  const CentralResult b = run_central(s.tensor, cfg);
  REQUIRE(a.trace.iterations.size() == b.trace.iterations.size());
  for (std::size_t i = 0; i < a.trace.iterations.size(); ++i) {
    CHECK(a.trace.iterations[i].objective == b.trace.iterations[i].objective);
    CHECK(a.trace.iterations[i].rmse == b.trace.iterations[i].rmse);
  }
  for (std::size_t f = 0; f < a.model.factors.size(); ++f)
    CHECK(a.model.factors[f] == b.model.factors[f]);
  CHECK(a.timing.computation_seconds == b.timing.computation_seconds);
}

TEST_CASE("hungarian finds the exact minimum assignment") {
  SUBCASE("the obvious two-by-two") {
    Mat cost(2, 2);
    cost << 0, 1, 1, 0;
    const Assignment a = hungarian(cost);
    CHECK(a.total_cost == 0.0);
    CHECK(a.match[0] == 0);
    CHECK(a.match[1] == 1);
  }

  SUBCASE("matches brute force on random matrices") {
    Rng rng(55);
    for (int trial = 0; trial < 200; ++trial) {
      const int n = 1 + static_cast<int>(rng.uniform_below(6));
      const Mat cost = testutil::rand_mat(rng, n, n, -3.0, 3.0);
      const Assignment a = hungarian(cost);

      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      double best = std::numeric_limits<double>::infinity();
      do {
        double c = 0.0;
        for (int i = 0; i < n; ++i)
          c += cost(i, static_cast<Eigen::Index>(perm[i]));
        best = std::min(best, c);
      } while (std::next_permutation(perm.begin(), perm.end()));

      CHECK(a.total_cost == doctest::Approx(best).epsilon(1e-10));
      // the reported match must price to the reported cost
      double priced = 0.0;
      std::vector<bool> used(n, false);
      for (int i = 0; i < n; ++i) {
        priced += cost(i, static_cast<Eigen::Index>(a.match[i]));
        CHECK_FALSE(used[a.match[i]]);
        used[a.match[i]] = true;
      }
      CHECK(priced == doctest::Approx(a.total_cost));
    }
  }

  SUBCASE("ties cost n times the constant") {
    Mat cost = Mat::Constant(4, 4, 2.5);
    CHECK(hungarian(cost).total_cost == doctest::Approx(10.0));
  }

  SUBCASE("non-square and empty inputs are refused") {
    CHECK_THROWS_AS(hungarian(Mat(2, 3)), std::invalid_argument);
    CHECK_THROWS_AS(hungarian(Mat(0, 0)), std::invalid_argument);
  }
}

TEST_CASE("cosine matching undoes column permutation and rescaling") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const int rank = 2 + static_cast<int>(rng.uniform_below(4));
    const Mat pivot = testutil::rand_mat(rng, 8, rank, 0.1, 1.0);

    std::vector<std::size_t> perm(rank);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = rank - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.uniform_below(static_cast<std::uint64_t>(i + 1))]);

    Mat other(8, rank);
    for (int j = 0; j < rank; ++j)
      other.col(j) =
          pivot.col(static_cast<Eigen::Index>(perm[j])) * (0.5 + rng.uniform01());

    Mat sim = Mat::Zero(rank, rank);
    for (int rp = 0; rp < rank; ++rp)
      for (int r = 0; r < rank; ++r) {
        const double na = pivot.col(rp).norm(), nb = other.col(r).norm();
        sim(rp, r) = pivot.col(rp).dot(other.col(r)) / (na * nb);
      }
    const Assignment a = hungarian(-sim);
    for (int rp = 0; rp < rank; ++rp) CHECK(perm[a.match[rp]] == static_cast<std::size_t>(rp));
  }
}

TEST_CASE("the isolated baseline with one hospital is the pooled fit") {
  const SyntheticTensor s = synth({10, 6, 5}, 2, 0.1, 9);
  FederationConfig cfg = base_cfg(1, 2, 25);
  const CentralResult central = run_central(s.tensor, cfg);
  const LocalResult local = run_local({s.tensor}, cfg);

  REQUIRE(local.hospital_models.size() == 1);
  for (std::size_t f = 0; f < 3; ++f)
    CHECK(local.hospital_models[0].factors[f] == central.model.factors[f]);
  CHECK(local.trace.final_rmse() ==
        doctest::Approx(central.trace.final_rmse()).epsilon(1e-12));
  REQUIRE(local.trace.iterations.size() == 1);
  CHECK(local.trace.converged);
  CHECK(local.trace.iterations[0].residual == 0.0);
}

TEST_CASE("identical shards collapse the isolated baseline to one fit") {
  const SyntheticTensor s = synth({9, 6, 4}, 2, 0.05, 41);
  FederationConfig cfg = base_cfg(2, 2, 25);
  const LocalResult local = run_local({s.tensor, s.tensor}, cfg);
  const CentralResult single = run_central(s.tensor, base_cfg(1, 2, 25));

  REQUIRE(local.global_factors.size() == 2);
  for (std::size_t f = 0; f < 2; ++f) {
    const double diff =
        (local.global_factors[f] - single.model.factors[f + 1]).norm();
    CHECK(diff <= 1e-12);
  }
  CHECK(local.trace.final_rmse() ==
        doctest::Approx(single.trace.final_rmse()).epsilon(1e-9));
}

TEST_CASE("a skewed split hurts the isolated baseline more than consensus") {
  const SyntheticTensor s = synth({36, 10, 8}, 3, 0.1, 4);
  FederationConfig cfg = base_cfg(3, 3, 100);
  const auto plan = make_partition_plan(36, 3, 0.9, 4);
  const auto shards = partition_patients(s.tensor, plan);

  const TripResult trip = run_trip(shards, cfg);
  const LocalResult local = run_local(shards, cfg);
  CHECK(local.trace.final_rmse() > trip.trace.final_rmse() * 1.01);
}

TEST_CASE("the isolated baseline prices its exchange through the codec") {
  const SyntheticTensor s = synth({12, 7, 5}, 2, 0.1, 61);
  FederationConfig cfg = base_cfg(2, 2, 20);
  const auto plan = make_partition_plan(12, 2, 0.5, 61);
  const auto shards = partition_patients(s.tensor, plan);
  const LocalResult local = run_local(shards, cfg);

  const int rank = cfg.trip.rank;
  const std::uint64_t hello = 17;  // versioned hello frame
  std::uint64_t up = 0, down = 0;
  for (std::size_t h = 0; h < 2; ++h) {
    up += hello;
    down += hello;
    for (std::size_t f = 1; f <= 2; ++f) {
      const std::uint64_t frame =
          kFrameOverhead + 8 + 8 +
          static_cast<std::uint64_t>(shards[0].dim(f)) * rank * 8;
      up += frame;
      down += frame;
    }
  }
  CHECK(local.timing.bytes_to_server == up);
  CHECK(local.timing.bytes_to_hospitals == down);
  CHECK(local.timing.communication_seconds ==
        doctest::Approx(static_cast<double>(up + down) /
                        cfg.link_bytes_per_sec));
  CHECK(local.timing.align_bytes_to_server == 0);
  CHECK(local.timing.alignment_seconds == 0.0);

  SUBCASE("shard sets that disagree with the config are refused") {
    CHECK_THROWS_AS(run_local({s.tensor}, cfg), std::invalid_argument);
    const SparseTensor other({4, 7, 9}, {0, 1, 2}, {1.0});
    CHECK_THROWS_AS(run_local({shards[0], other}, cfg), std::invalid_argument);
  }
}
