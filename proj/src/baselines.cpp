#include "trip/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace trip {

CentralResult run_central(const SparseTensor& tensor,
                          const FederationConfig& cfg) {
  FederationConfig solo = cfg;
  solo.k = 1;
  solo.align = false;
  solo.transport = FederationConfig::Transport::in_process;
  TripResult r = run_trip({tensor}, solo);

  CentralResult out;
  out.model = std::move(r.hospital_models[0]);
  out.trace = std::move(r.trace);
  out.timing = r.timing;
  // a pooled run ships the raw data to the server once; the engine's own
  // message traffic is an artifact of reusing the consensus code path
  out.timing.bytes_to_server = tensor_wire_bytes(tensor);
  out.timing.bytes_to_hospitals = 0;
  out.timing.communication_seconds =
      static_cast<double>(out.timing.bytes_to_server) / cfg.link_bytes_per_sec;
  out.timing.alignment_seconds = 0.0;
  out.timing.alignment_compute_seconds = 0.0;
  out.timing.align_bytes_to_server = 0;
  out.timing.align_bytes_to_hospitals = 0;
  return out;
}

Assignment hungarian(const Mat& cost) {
  if (cost.rows() != cost.cols() || cost.rows() == 0)
    throw std::invalid_argument("hungarian: cost matrix must be square");
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // potentials method, 1-based with a virtual column 0
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  Assignment a;
  a.match.assign(n, 0);
  for (int j = 1; j <= n; ++j) a.match[p[j] - 1] = static_cast<std::size_t>(j - 1);
  for (int i = 0; i < n; ++i) a.total_cost += cost(i, static_cast<Eigen::Index>(a.match[i]));
  return a;
}

namespace {

double cosine(const Vec& a, const Vec& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

Mat permute_columns(const Mat& m, const std::vector<std::size_t>& match) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.cols(); ++r)
    out.col(r) = m.col(static_cast<Eigen::Index>(match[r]));
  return out;
}

}  // namespace

LocalResult run_local(const std::vector<SparseTensor>& shards,
                      const FederationConfig& cfg) {
  cfg.validate();
  if (shards.empty() || shards.size() != cfg.k)
    throw std::invalid_argument("shard count does not match hospital count");
  const std::size_t order = shards.front().order();
  for (const auto& s : shards) {
    if (s.order() != order)
      throw std::invalid_argument("shards disagree on tensor order");
    for (std::size_t m = 1; m < order; ++m)
      if (s.dim(m) != shards.front().dim(m))
        throw std::invalid_argument(
            "shards disagree on feature dimensions; align them first");
  }
  const std::size_t n_modes = order - 1;
  const int rank = cfg.trip.rank;

  // independent per-hospital fits (identical seeds, so a hospital's result
  // depends only on its own data)
  std::vector<CentralResult> fits;
  fits.reserve(cfg.k);
  for (std::size_t h = 0; h < cfg.k; ++h) fits.push_back(run_central(shards[h], cfg));

  WorkClock clock(cfg.time_mode == FederationConfig::TimeMode::modeled,
                  cfg.modeled_work_per_sec);
  clock.start();
  std::vector<std::vector<Mat>> permuted(cfg.k);
  permuted[0] = fits[0].model.factors;
  for (std::size_t h = 1; h < cfg.k; ++h) {
    Mat sim = Mat::Zero(rank, rank);
    for (std::size_t f = 0; f < n_modes; ++f) {
      const Mat& pivot = fits[0].model.factors[f + 1];
      const Mat& other = fits[h].model.factors[f + 1];
      for (int rp = 0; rp < rank; ++rp)
        for (int r = 0; r < rank; ++r)
          sim(rp, r) += cosine(pivot.col(rp), other.col(r));
    }
    const Assignment asg = hungarian(-sim);
    permuted[h].reserve(order);
    for (const Mat& f : fits[h].model.factors)
      permuted[h].push_back(permute_columns(f, asg.match));
  }

  LocalResult out;
  for (std::size_t f = 0; f < n_modes; ++f) {
    Mat avg = Mat::Zero(shards.front().dim(f + 1), rank);
    for (std::size_t h = 0; h < cfg.k; ++h) avg += permuted[h][f + 1];
    avg /= static_cast<double>(cfg.k);
    out.global_factors.push_back(std::move(avg));
  }
  clock.stop();
  for (std::size_t f = 0; f < n_modes; ++f)
    clock.charge(static_cast<double>(cfg.k) *
                 (6.0 * static_cast<double>(shards.front().dim(f + 1)) * rank *
                      rank +
                  static_cast<double>(shards.front().dim(f + 1)) * rank));
  clock.charge(static_cast<double>(cfg.k) * rank * rank * rank);

  // every hospital ends up holding its own patient factor plus the averages
  double fit_total = 0.0;
  double cells = 0.0;
  for (std::size_t h = 0; h < cfg.k; ++h) {
    CpModel m;
    m.factors.push_back(permuted[h][0]);
    for (const Mat& g : out.global_factors) m.factors.push_back(g);
    m.mode_names = shards[h].mode_names();
    fit_total += residual_sum_squares(m, shards[h]);
    cells += shards[h].cell_count();
    out.hospital_models.push_back(std::move(m));
  }

  IterationStats point;
  point.fit_sum_squares = fit_total;
  double penalty = 0.0;
  for (const Mat& g : out.global_factors)
    penalty += 0.5 * cfg.trip.lambda * orthonormality_penalty(g);
  point.objective = fit_total + penalty;
  point.residual = 0.0;
  point.rmse = std::sqrt(std::max(0.0, fit_total) / cells);
  out.trace.iterations.push_back(point);
  out.trace.converged = true;

  // hospitals run in parallel; the exchange ships each hospital's feature
  // factors up and the averages back, priced through the real codec
  double slowest = 0.0;
  for (const auto& f : fits)
    slowest = std::max(slowest, f.timing.computation_seconds);
  PhaseBytes bytes;
  for (std::size_t h = 0; h < cfg.k; ++h) {
    bytes.to_server += encode_frame(make_hello(static_cast<std::uint16_t>(h))).size();
    bytes.to_hospitals += encode_frame(make_hello(kCoordinatorId)).size();
    for (std::size_t f = 0; f < n_modes; ++f) {
      Message m;
      m.type = MsgType::LocalFeatureFactor;
      m.sender = static_cast<std::uint16_t>(h);
      m.mode = static_cast<std::uint16_t>(f + 1);
      m.round = 1;
      m.body = MatrixBody{fits[h].model.factors[f + 1]};
      bytes.to_server += encode_frame(m).size();
      m.type = MsgType::GlobalFeatureFactor;
      m.sender = kCoordinatorId;
      m.body = MatrixBody{out.global_factors[f]};
      bytes.to_hospitals += encode_frame(m).size();
    }
  }
  out.timing.computation_seconds = slowest + clock.seconds();
  out.timing.bytes_to_server = bytes.to_server;
  out.timing.bytes_to_hospitals = bytes.to_hospitals;
  out.timing.communication_seconds =
      static_cast<double>(bytes.to_server + bytes.to_hospitals) /
      cfg.link_bytes_per_sec;
  out.timing.link_bytes_per_sec = cfg.link_bytes_per_sec;
  return out;
}

}  // namespace trip
