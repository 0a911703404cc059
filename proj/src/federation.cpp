#include "trip/federation.hpp"

#include <algorithm>
#include <chrono>
#include <thread>

#include "trip/rng.hpp"

namespace trip {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// per-hospital blinding root; fresh per (mode, attempt)
std::uint64_t draw_alpha(std::uint64_t seed, std::size_t hospital,
                         std::uint16_t mode, int attempt, std::uint64_t p) {
  Rng rng(mix_seed(seed ^ 0xA1160F5EEDull, hospital, mode,
                   static_cast<std::uint64_t>(attempt)));
  return kCodeSpaceBound + rng.uniform_below(p - kCodeSpaceBound);
}

Mat uniform_matrix(std::size_t rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform01();
  return m;
}

}  // namespace

void FederationConfig::validate() const {
  trip.validate();
  if (k < 1) throw std::invalid_argument("need at least one hospital");
  if (align && k > 16)
    throw std::invalid_argument("alignment supports at most 16 hospitals");
  if (link_bytes_per_sec <= 0)
    throw std::invalid_argument("link rate must be positive");
  if (modeled_work_per_sec <= 0)
    throw std::invalid_argument("modeled work rate must be positive");
  if (align_retries < 0)
    throw std::invalid_argument("align_retries must be >= 0");
}

WorkClock::WorkClock(bool modeled, double work_per_sec)
    : modeled_(modeled), work_per_sec_(work_per_sec) {}

void WorkClock::start() {
  if (modeled_ || running_) return;
  t0_ = now_seconds();
  running_ = true;
}

void WorkClock::stop() {
  if (modeled_ || !running_) return;
  accum_ += now_seconds() - t0_;
  running_ = false;
}

void WorkClock::charge(double work_units) {
  if (modeled_) work_ += work_units;
}

double WorkClock::seconds() const {
  return modeled_ ? work_ / work_per_sec_ : accum_;
}

void WorkClock::reset() {
  accum_ = 0.0;
  work_ = 0.0;
  running_ = false;
}

TimingReport timing_model(
    const std::vector<std::vector<double>>& hospital_seconds_by_iteration,
    const std::vector<double>& coordinator_seconds_by_iteration,
    PhaseBytes factor_bytes, double align_compute_seconds,
    PhaseBytes align_bytes, double link_bytes_per_sec) {
  if (link_bytes_per_sec <= 0)
    throw std::invalid_argument("link rate must be positive");
  TimingReport r;
  r.link_bytes_per_sec = link_bytes_per_sec;
  for (std::size_t t = 0; t < hospital_seconds_by_iteration.size(); ++t) {
    const auto& h = hospital_seconds_by_iteration[t];
    double slowest = 0.0;
    for (double s : h) slowest = std::max(slowest, s);
    r.computation_seconds += slowest;
    if (t < coordinator_seconds_by_iteration.size())
      r.computation_seconds += coordinator_seconds_by_iteration[t];
  }
  r.bytes_to_server = factor_bytes.to_server;
  r.bytes_to_hospitals = factor_bytes.to_hospitals;
  r.communication_seconds =
      static_cast<double>(factor_bytes.to_server + factor_bytes.to_hospitals) /
      link_bytes_per_sec;
  r.align_bytes_to_server = align_bytes.to_server;
  r.align_bytes_to_hospitals = align_bytes.to_hospitals;
  r.alignment_compute_seconds = align_compute_seconds;
  r.alignment_seconds =
      align_compute_seconds +
      static_cast<double>(align_bytes.to_server + align_bytes.to_hospitals) /
          link_bytes_per_sec;
  return r;
}

// --- coordinator session --------------------------------------------------

CoordinatorSession::CoordinatorSession(
    std::vector<std::shared_ptr<Channel>> accepted, const FederationConfig& cfg,
    MessageLog* log)
    : raw_(std::move(accepted)), cfg_(cfg), log_(log) {
  cfg_.validate();
  if (raw_.size() != cfg_.k)
    throw std::invalid_argument("channel count does not match hospital count");
}

void CoordinatorSession::send_to(std::size_t hospital, const Message& m) {
  const auto frame = encode_frame(m);
  current_->to_hospitals += frame.size();
  if (log_) log_->add(false, frame.size(), m);
  by_id_.at(hospital)->send_frame(frame);
}

Message CoordinatorSession::recv_from(std::size_t hospital, MsgType expect,
                                      std::uint16_t mode, std::uint32_t round) {
  const auto frame = by_id_.at(hospital)->recv_frame();
  current_->to_server += frame.size();
  Message m = decode_frame(frame);
  if (log_) log_->add(true, frame.size(), m);
  if (m.type == MsgType::Abort) {
    const auto& b = std::get<AbortBody>(m.body);
    throw ProtocolError("hospital " + std::to_string(hospital) +
                        " aborted: " + b.reason);
  }
  if (m.type != expect)
    throw ProtocolError(std::string("expected ") + msg_type_name(expect) +
                        " from hospital " + std::to_string(hospital) +
                        ", got " + msg_type_name(m.type));
  if (m.sender != hospital)
    throw ProtocolError("sender id does not match the channel");
  if (m.mode != mode || m.round != round)
    throw ProtocolError(std::string(msg_type_name(expect)) +
                        " carries wrong mode/round");
  return m;
}

void CoordinatorSession::handshake() {
  current_ = &handshake_bytes_;
  by_id_.assign(cfg_.k, nullptr);
  for (auto& ch : raw_) {
    const auto frame = ch->recv_frame();
    handshake_bytes_.to_server += frame.size();
    Message m = decode_frame(frame);
    if (log_) log_->add(true, frame.size(), m);
    if (m.type != MsgType::Hello || !std::holds_alternative<HelloBody>(m.body))
      throw ProtocolError("expected a Hello with version and id");
    const auto& b = std::get<HelloBody>(m.body);
    if (b.version != kProtocolVersion)
      throw ProtocolError("protocol version mismatch");
    if (m.sender >= cfg_.k) throw ProtocolError("hospital id out of range");
    if (by_id_[m.sender]) throw ProtocolError("duplicate hospital id");
    by_id_[m.sender] = ch;
  }
  for (std::size_t h = 0; h < cfg_.k; ++h)
    send_to(h, make_hello(kCoordinatorId));
  current_ = &factor_bytes_;
}

std::vector<std::map<std::uint32_t, std::uint64_t>> CoordinatorSession::align(
    std::size_t n_feature_modes) {
  current_ = &align_bytes_;
  WorkClock clock(cfg_.time_mode == FederationConfig::TimeMode::modeled,
                  cfg_.modeled_work_per_sec);
  std::vector<std::map<std::uint32_t, std::uint64_t>> merged_per_mode;
  aligned_dims_.clear();

  for (std::size_t f = 0; f < n_feature_modes; ++f) {
    const std::uint16_t mode = static_cast<std::uint16_t>(f + 1);
    bool done = false;
    for (int attempt = 0; attempt <= cfg_.align_retries && !done; ++attempt) {
      align_attempts_ = std::max(align_attempts_, attempt + 1);
      const std::uint64_t p = modulus_for_attempt(attempt);

      std::vector<SetPolynomial> polys(cfg_.k);
      for (std::size_t h = 0; h < cfg_.k; ++h) {
        Message m = recv_from(h, MsgType::AlignPoly, mode,
                              static_cast<std::uint32_t>(attempt));
        polys[h] = std::get<PolyBody>(m.body).poly;
        if (polys[h].modulus != p)
          throw ProtocolError("blinded polynomial uses the wrong modulus");
      }

      clock.reset();
      clock.start();
      std::vector<PairwiseSumsBody> sums(cfg_.k);
      double sum_work = 0.0;
      for (std::size_t h = 0; h < cfg_.k; ++h) {
        for (std::size_t o = 0; o < cfg_.k; ++o) {
          if (o == h) continue;
          sums[h].sums.emplace_back(static_cast<std::uint16_t>(o),
                                    pairwise_sum(polys[h], polys[o]));
          sum_work += static_cast<double>(
              std::max(polys[h].coeffs.size(), polys[o].coeffs.size()));
        }
      }
      clock.stop();
      clock.charge(sum_work);

      for (std::size_t h = 0; h < cfg_.k; ++h) {
        Message m;
        m.type = MsgType::AlignPairwiseSums;
        m.sender = kCoordinatorId;
        m.mode = mode;
        m.round = static_cast<std::uint32_t>(attempt);
        m.body = sums[h];
        send_to(h, m);
      }

      std::vector<std::map<std::uint32_t, std::uint64_t>> reports(cfg_.k);
      double slowest = 0.0;
      for (std::size_t h = 0; h < cfg_.k; ++h) {
        Message m = recv_from(h, MsgType::AlignRegionSizes, mode,
                              static_cast<std::uint32_t>(attempt));
        const auto& b = std::get<RegionSizesBody>(m.body);
        slowest = std::max(slowest, b.compute_seconds);
        for (const auto& [mask, size] : b.sizes) reports[h][mask] = size;
      }
      align_compute_seconds_ += slowest + clock.seconds();

      try {
        auto merged = merge_region_reports(reports);
        GlobalSizesBody gb;
        for (const auto& [mask, size] : merged) gb.sizes.emplace_back(mask, size);
        for (std::size_t h = 0; h < cfg_.k; ++h) {
          Message m;
          m.type = MsgType::AlignGlobalSizes;
          m.sender = kCoordinatorId;
          m.mode = mode;
          m.round = static_cast<std::uint32_t>(attempt);
          m.body = gb;
          send_to(h, m);
        }
        std::uint64_t total = 0;
        for (const auto& [mask, size] : merged) total += size;
        aligned_dims_.push_back(static_cast<std::size_t>(total));
        merged_per_mode.push_back(std::move(merged));
        done = true;
      } catch (const std::runtime_error& e) {
        Message m;
        m.type = MsgType::Abort;
        m.sender = kCoordinatorId;
        m.mode = mode;
        m.round = static_cast<std::uint32_t>(attempt);
        const bool fatal = attempt == cfg_.align_retries;
        m.body = AbortBody{std::string(e.what()) +
                               (fatal ? "" : "; rerunning with fresh blinding"),
                           fatal};
        for (std::size_t h = 0; h < cfg_.k; ++h) send_to(h, m);
        if (fatal)
          throw ProtocolError(std::string("alignment failed for mode ") +
                              std::to_string(mode) + ": " + e.what());
      }
    }
  }
  current_ = &factor_bytes_;
  return merged_per_mode;
}

CoordinatorSession::FactorOutcome CoordinatorSession::factor(
    const std::vector<std::size_t>& feature_dims, double total_cells) {
  current_ = &factor_bytes_;
  const std::size_t n_modes = feature_dims.size();
  if (n_modes == 0) throw std::invalid_argument("need at least one feature mode");
  const int rank = cfg_.trip.rank;
  const double k = static_cast<double>(cfg_.k);
  WorkClock clock(cfg_.time_mode == FederationConfig::TimeMode::modeled,
                  cfg_.modeled_work_per_sec);

  ServerState st;
  std::vector<std::vector<Mat>> h_cache(n_modes);
  for (std::size_t f = 0; f < n_modes; ++f) {
    Rng rng(mix_seed(cfg_.trip.seed, f + 1, 0xC0FFEE));
    Mat a = uniform_matrix(feature_dims[f], rank, rng);
    st.global_factors.push_back(a);
    st.b_factors.push_back(a);
    st.y_multipliers.push_back(Mat::Zero(feature_dims[f], rank));
    h_cache[f].assign(cfg_.k, Mat::Zero(feature_dims[f], rank));
  }

  // round 0: broadcast the shared initialization
  for (std::size_t f = 0; f < n_modes; ++f) {
    Message m;
    m.type = MsgType::GlobalFeatureFactor;
    m.sender = kCoordinatorId;
    m.mode = static_cast<std::uint16_t>(f + 1);
    m.round = 0;
    m.body = MatrixBody{st.global_factors[f]};
    for (std::size_t h = 0; h < cfg_.k; ++h) send_to(h, m);
  }

  FactorOutcome out;
  double prev_objective = 0.0;
  for (int t = 1; t <= cfg_.trip.max_iter; ++t) {
    const auto round = static_cast<std::uint32_t>(t);
    clock.reset();
    double iteration_residual = 0.0;

    for (std::size_t f = 0; f < n_modes; ++f) {
      const std::uint16_t mode = static_cast<std::uint16_t>(f + 1);
      std::vector<Mat> locals(cfg_.k);
      for (std::size_t h = 0; h < cfg_.k; ++h) {
        Message m = recv_from(h, MsgType::LocalFeatureFactor, mode, round);
        Mat& mm = std::get<MatrixBody>(m.body).m;
        if (static_cast<std::size_t>(mm.rows()) != feature_dims[f] ||
            mm.cols() != rank)
          throw ProtocolError("local factor has the wrong shape");
        locals[h] = std::move(mm);
      }

      clock.start();
      Mat a_new = update_global_feature_factor(locals, h_cache[f], st.b_factors[f],
                                               st.y_multipliers[f], cfg_.trip,
                                               cfg_.k);
      const Mat b_new = update_b(a_new, st.y_multipliers[f], cfg_.trip.mu);
      st.y_multipliers[f] =
          update_y(st.y_multipliers[f], b_new, a_new, cfg_.trip.mu);
      st.b_factors[f] = b_new;
      const double res = primal_residual(locals, a_new);
      clock.stop();
      clock.charge(work_global_update(feature_dims[f], rank, cfg_.k));
      st.global_factors[f] = std::move(a_new);

      const double denom = std::sqrt(k) * st.global_factors[f].norm() + 1e-12;
      iteration_residual = std::max(iteration_residual, res / denom);

      Message g;
      g.type = MsgType::GlobalFeatureFactor;
      g.sender = kCoordinatorId;
      g.mode = mode;
      g.round = round;
      g.body = MatrixBody{st.global_factors[f]};
      for (std::size_t h = 0; h < cfg_.k; ++h) send_to(h, g);

      for (std::size_t h = 0; h < cfg_.k; ++h) {
        Message m = recv_from(h, MsgType::MultiplierH, mode, round);
        Mat& mm = std::get<MatrixBody>(m.body).m;
        if (static_cast<std::size_t>(mm.rows()) != feature_dims[f] ||
            mm.cols() != rank)
          throw ProtocolError("multiplier has the wrong shape");
        h_cache[f][h] = std::move(mm);
      }
    }

    double fit_total = 0.0;
    std::vector<double> hosp_secs(cfg_.k, 0.0);
    for (std::size_t h = 0; h < cfg_.k; ++h) {
      Message m = recv_from(h, MsgType::RoundComplete, 0, round);
      const auto& b = std::get<RoundCompleteBody>(m.body);
      fit_total += b.fit_sum_squares;
      hosp_secs[h] = b.compute_seconds;
    }

    clock.start();
    double penalty = 0.0;
    for (std::size_t f = 0; f < n_modes; ++f)
      penalty += 0.5 * cfg_.trip.lambda *
                 orthonormality_penalty(st.global_factors[f]);
    clock.stop();
    for (std::size_t f = 0; f < n_modes; ++f)
      clock.charge(static_cast<double>(feature_dims[f]) * rank * rank +
                   static_cast<double>(rank) * rank);

    IterationStats stats;
    stats.objective = fit_total + penalty;
    stats.fit_sum_squares = fit_total;
    stats.residual = iteration_residual;
    stats.rmse = total_cells > 0
                     ? std::sqrt(std::max(0.0, fit_total) / total_cells)
                     : std::numeric_limits<double>::quiet_NaN();
    out.trace.iterations.push_back(stats);
    out.hospital_seconds.push_back(std::move(hosp_secs));
    out.coordinator_seconds.push_back(clock.seconds());

    const bool residual_ok = iteration_residual < cfg_.trip.tol;
    const bool objective_ok =
        t >= 2 && std::abs(stats.objective - prev_objective) /
                          std::max(1.0, std::abs(prev_objective)) <
                      cfg_.trip.tol;
    prev_objective = stats.objective;

    const bool stop_now = (residual_ok && objective_ok) || t == cfg_.trip.max_iter;
    Message ctrl;
    ctrl.sender = kCoordinatorId;
    ctrl.round = round;
    if (stop_now) {
      out.trace.converged = residual_ok && objective_ok;
      ctrl.type = MsgType::Converged;
      ctrl.body = ConvergedBody{static_cast<std::uint32_t>(t)};
      for (std::size_t h = 0; h < cfg_.k; ++h) send_to(h, ctrl);
      break;
    }
    ctrl.type = MsgType::RoundComplete;
    ctrl.body = RoundCompleteBody{};
    for (std::size_t h = 0; h < cfg_.k; ++h) send_to(h, ctrl);
  }

  out.globals = st.global_factors;
  return out;
}

// --- participant session ---------------------------------------------------

ParticipantSession::ParticipantSession(std::shared_ptr<Channel> ch,
                                       std::uint16_t id,
                                       const FederationConfig& cfg,
                                       MessageLog* log)
    : ch_(std::move(ch)), id_(id), cfg_(cfg), log_(log) {
  cfg_.validate();
  if (id_ >= cfg_.k) throw std::invalid_argument("hospital id out of range");
}

void ParticipantSession::send(const Message& m) {
  const auto frame = encode_frame(m);
  if (log_) log_->add(true, frame.size(), m);
  ch_->send_frame(frame);
}

Message ParticipantSession::recv(MsgType expect, std::uint16_t mode,
                                 std::uint32_t round, bool allow_abort) {
  Message m = decode_frame(ch_->recv_frame());
  if (log_) log_->add(false, 0, m);
  if (m.type == MsgType::Abort) {
    const auto& b = std::get<AbortBody>(m.body);
    if (b.fatal) throw ProtocolError("coordinator aborted: " + b.reason);
    if (allow_abort) return m;
    throw ProtocolError("unexpected alignment rerun request");
  }
  if (m.type != expect)
    throw ProtocolError(std::string("expected ") + msg_type_name(expect) +
                        ", got " + msg_type_name(m.type));
  if (m.sender != kCoordinatorId)
    throw ProtocolError("message does not come from the coordinator");
  if (m.mode != mode || m.round != round)
    throw ProtocolError(std::string(msg_type_name(expect)) +
                        " carries wrong mode/round");
  return m;
}

void ParticipantSession::handshake() {
  send(make_hello(id_));
  Message m = decode_frame(ch_->recv_frame());
  if (log_) log_->add(false, 0, m);
  if (m.type != MsgType::Hello || m.sender != kCoordinatorId)
    throw ProtocolError("handshake reply is not a coordinator Hello");
}

std::vector<AlignmentResult> ParticipantSession::align(
    const std::vector<std::vector<std::uint64_t>>& vocabs) {
  std::vector<AlignmentResult> results(vocabs.size());
  WorkClock clock(cfg_.time_mode == FederationConfig::TimeMode::modeled,
                  cfg_.modeled_work_per_sec);

  for (std::size_t f = 0; f < vocabs.size(); ++f) {
    const std::uint16_t mode = static_cast<std::uint16_t>(f + 1);
    bool done = false;
    for (int attempt = 0; attempt <= cfg_.align_retries && !done; ++attempt) {
      const auto round = static_cast<std::uint32_t>(attempt);
      const std::uint64_t p = modulus_for_attempt(attempt);
      const std::uint64_t alpha =
          draw_alpha(cfg_.trip.seed, id_, mode, attempt, p);

      clock.reset();
      clock.start();
      SetPolynomial poly = encode_set(vocabs[f], alpha, p);
      clock.stop();
      clock.charge(work_encode_set(vocabs[f].size()));

      Message pm;
      pm.type = MsgType::AlignPoly;
      pm.sender = id_;
      pm.mode = mode;
      pm.round = round;
      pm.body = PolyBody{poly};
      send(pm);

      Message sums_msg = recv(MsgType::AlignPairwiseSums, mode, round);
      if (sums_msg.type == MsgType::Abort) continue;
      const auto& sums = std::get<PairwiseSumsBody>(sums_msg.body).sums;

      clock.start();
      std::vector<std::pair<std::size_t, SetPolynomial>> typed;
      double degree_sum = 0.0;
      for (const auto& [other, sp] : sums) {
        typed.emplace_back(other, sp);
        degree_sum += static_cast<double>(sp.coeffs.size());
      }
      const auto classified = classify_elements(vocabs[f], id_, cfg_.k, typed);
      const auto counts = count_regions(classified, id_, cfg_.k);
      clock.stop();
      clock.charge(work_classify(vocabs[f].size(), degree_sum));

      Message rm;
      rm.type = MsgType::AlignRegionSizes;
      rm.sender = id_;
      rm.mode = mode;
      rm.round = round;
      RegionSizesBody rb;
      rb.compute_seconds = clock.seconds();
      for (const auto& [mask, size] : counts) rb.sizes.emplace_back(mask, size);
      rm.body = rb;
      send(rm);

      Message gm = recv(MsgType::AlignGlobalSizes, mode, round);
      if (gm.type == MsgType::Abort) continue;  // rerun with fresh blinding
      const auto& gb = std::get<GlobalSizesBody>(gm.body);
      AlignmentResult res;
      for (const auto& [mask, size] : gb.sizes) res.region_sizes[mask] = size;
      res.global_index = build_global_order(res.region_sizes, classified);
      for (const auto& [mask, size] : res.region_sizes)
        res.global_size += static_cast<std::size_t>(size);
      results[f] = std::move(res);
      done = true;
    }
    if (!done)
      throw ProtocolError("alignment retries exhausted for mode " +
                          std::to_string(mode));
  }
  return results;
}

HospitalState ParticipantSession::factor(const SparseTensor& shard) {
  const std::size_t n_modes = shard.order() - 1;
  if (n_modes == 0) throw std::invalid_argument("tensor needs a feature mode");
  const int rank = cfg_.trip.rank;
  WorkClock clock(cfg_.time_mode == FederationConfig::TimeMode::modeled,
                  cfg_.modeled_work_per_sec);

  HospitalState state;
  state.shard = &shard;
  state.patient_factor = Mat::Zero(shard.dim(0), rank);
  for (std::size_t f = 0; f < n_modes; ++f) {
    Message m = recv(MsgType::GlobalFeatureFactor,
                     static_cast<std::uint16_t>(f + 1), 0, false);
    Mat& g = std::get<MatrixBody>(m.body).m;
    if (static_cast<std::size_t>(g.rows()) != shard.dim(f + 1) || g.cols() != rank)
      throw ProtocolError("global factor does not match the shard dimensions");
    state.globals.push_back(g);
    state.feature_factors.push_back(g);
    state.multipliers.push_back(Mat::Zero(g.rows(), rank));
  }

  for (int t = 1;; ++t) {
    const auto round = static_cast<std::uint32_t>(t);
    clock.reset();

    clock.start();
    state.patient_factor =
        update_patient_factor(shard, state.feature_factors, cfg_.trip.ridge);
    clock.stop();
    clock.charge(
        work_patient_update(shard.nnz(), shard.order(), shard.dim(0), rank));

    for (std::size_t f = 0; f < n_modes; ++f) {
      const std::uint16_t mode = static_cast<std::uint16_t>(f + 1);

      clock.start();
      Mat local =
          update_local_feature_factor(state, state.globals[f], f + 1, cfg_.trip);
      clock.stop();
      clock.charge(
          work_feature_update(shard.nnz(), shard.order(), shard.dim(f + 1), rank));
      state.feature_factors[f] = local;

      Message lm;
      lm.type = MsgType::LocalFeatureFactor;
      lm.sender = id_;
      lm.mode = mode;
      lm.round = round;
      lm.body = MatrixBody{local};
      send(lm);

      Message gm = recv(MsgType::GlobalFeatureFactor, mode, round, false);
      state.globals[f] = std::move(std::get<MatrixBody>(gm.body).m);
      if (state.globals[f].rows() != local.rows())
        throw ProtocolError("global factor changed shape mid-run");

      clock.start();
      state.multipliers[f] =
          update_h(state.multipliers[f], state.globals[f], local, cfg_.trip.omega);
      clock.stop();
      clock.charge(2.0 * static_cast<double>(shard.dim(f + 1)) * rank);

      Message hm;
      hm.type = MsgType::MultiplierH;
      hm.sender = id_;
      hm.mode = mode;
      hm.round = round;
      hm.body = MatrixBody{state.multipliers[f]};
      send(hm);
    }

    clock.start();
    CpModel local_model{state.local_factors(), shard.mode_names()};
    const double fit = residual_sum_squares(local_model, shard);
    clock.stop();
    clock.charge(work_fit(shard.nnz(), shard.order(), shard.shape(), rank));

    Message done;
    done.type = MsgType::RoundComplete;
    done.sender = id_;
    done.mode = 0;
    done.round = round;
    done.body = RoundCompleteBody{fit, clock.seconds()};
    send(done);

    Message ctrl = decode_frame(ch_->recv_frame());
    if (log_) log_->add(false, 0, ctrl);
    if (ctrl.type == MsgType::Abort) {
      const auto& b = std::get<AbortBody>(ctrl.body);
      throw ProtocolError("coordinator aborted: " + b.reason);
    }
    if (ctrl.round != round)
      throw ProtocolError("control message for the wrong round");
    if (ctrl.type == MsgType::Converged) break;
    if (ctrl.type != MsgType::RoundComplete)
      throw ProtocolError(std::string("unexpected control message: ") +
                          msg_type_name(ctrl.type));
  }
  return state;
}

// --- work model -------------------------------------------------------------

double work_patient_update(std::size_t nnz, std::size_t order,
                           std::size_t patients, int rank) {
  const double r = rank;
  return 2.0 * static_cast<double>(nnz) * (order - 1) * r +
         static_cast<double>(patients) * r * r + r * r * r / 3.0;
}

double work_feature_update(std::size_t nnz, std::size_t order, std::size_t dim,
                           int rank) {
  const double r = rank;
  return 2.0 * static_cast<double>(nnz) * (order - 1) * r +
         static_cast<double>(dim) * r * r + r * r * r / 3.0 +
         2.0 * static_cast<double>(dim) * r;
}

double work_fit(std::size_t nnz, std::size_t order,
                const std::vector<std::size_t>& dims, int rank) {
  const double r = rank;
  double gram = 0.0;
  for (std::size_t d : dims) gram += static_cast<double>(d) * r * r;
  return 2.0 * static_cast<double>(nnz) * order * r + gram +
         static_cast<double>(order) * r * r;
}

double work_global_update(std::size_t dim, int rank, std::size_t k) {
  const double d = static_cast<double>(dim), r = rank, kk = static_cast<double>(k);
  return 2.0 * d * d * r + d * d * d / 3.0 + 2.0 * d * d * r +
         4.0 * kk * d * r + 2.0 * kk * d * r;
}

double work_encode_set(std::size_t set_size) {
  const double n = static_cast<double>(set_size) + 2.0;
  return 3.0 * n * n;
}

double work_classify(std::size_t set_size, double degree_sum) {
  return 3.0 * static_cast<double>(set_size) * degree_sum;
}

// --- drivers ----------------------------------------------------------------

namespace {

struct HospitalRun {
  HospitalState state;
  std::vector<AlignmentResult> align;
  SparseTensor reindexed;  // owns the shard the state points into
  std::exception_ptr error;
};

void check_shards(const std::vector<SparseTensor>& shards,
                  const FederationConfig& cfg, bool require_same_dims) {
  if (shards.empty() || shards.size() != cfg.k)
    throw std::invalid_argument("shard count does not match hospital count");
  const std::size_t order = shards.front().order();
  if (order < 2) throw std::invalid_argument("tensor needs a feature mode");
  for (const auto& s : shards) {
    if (s.order() != order)
      throw std::invalid_argument("shards disagree on tensor order");
    if (require_same_dims)
      for (std::size_t m = 1; m < order; ++m)
        if (s.dim(m) != shards.front().dim(m))
          throw std::invalid_argument(
              "shards disagree on feature dimensions; align them first");
  }
}

// builds one channel per hospital for the requested transport
std::pair<std::vector<std::shared_ptr<Channel>>,
          std::vector<std::shared_ptr<Channel>>>
make_channels(const FederationConfig& cfg) {
  std::vector<std::shared_ptr<Channel>> coord(cfg.k), part(cfg.k);
  if (cfg.transport == FederationConfig::Transport::in_process) {
    for (std::size_t h = 0; h < cfg.k; ++h) {
      auto [a, b] = make_in_process_pair();
      coord[h] = a;
      part[h] = b;
    }
    return {coord, part};
  }
  TcpListener listener(cfg.host, cfg.port);
  const std::uint16_t port = listener.port();
  std::vector<std::thread> dialers;
  std::vector<std::exception_ptr> errs(cfg.k);
  for (std::size_t h = 0; h < cfg.k; ++h)
    dialers.emplace_back([&, h] {
      try {
        part[h] = tcp_connect(cfg.host, port);
      } catch (...) {
        errs[h] = std::current_exception();
      }
    });
  for (std::size_t h = 0; h < cfg.k; ++h) coord[h] = listener.accept_one();
  for (auto& t : dialers) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return {coord, part};
}

TripResult run_trip_impl(const std::vector<SparseTensor>& shards,
                         const FederationConfig& cfg, bool with_alignment,
                         AlignmentOutcome* align_out, MessageLog* log) {
  cfg.validate();
  check_shards(shards, cfg, !with_alignment);
  const std::size_t n_modes = shards.front().order() - 1;

  auto [coord_chans, part_chans] = make_channels(cfg);
  std::vector<HospitalRun> runs(cfg.k);
  std::vector<std::thread> threads;
  threads.reserve(cfg.k);
  for (std::size_t h = 0; h < cfg.k; ++h) {
    threads.emplace_back([&, h] {
      try {
        ParticipantSession session(part_chans[h], static_cast<std::uint16_t>(h),
                                   cfg);
        session.handshake();
        const SparseTensor* shard = &shards[h];
        if (with_alignment) {
          std::vector<std::vector<std::uint64_t>> vocabs(n_modes);
          for (std::size_t f = 0; f < n_modes; ++f)
            vocabs[f] = observed_vocabulary(shards[h], f + 1);
          runs[h].align = session.align(vocabs);
          SparseTensor re = shards[h];
          for (std::size_t f = 0; f < n_modes; ++f)
            re = reindex_mode(re, f + 1, runs[h].align[f].global_index,
                              runs[h].align[f].global_size);
          runs[h].reindexed = std::move(re);
          shard = &runs[h].reindexed;
        }
        runs[h].state = session.factor(*shard);
        runs[h].state.shard = nullptr;  // the pointed-to shard may go away
      } catch (...) {
        runs[h].error = std::current_exception();
        part_chans[h]->close();
      }
    });
  }

  std::exception_ptr coord_error;
  CoordinatorSession session(coord_chans, cfg, log);
  CoordinatorSession::FactorOutcome outcome;
  try {
    session.handshake();
    std::vector<std::size_t> dims;
    if (with_alignment) {
      session.align(n_modes);
      dims = session.aligned_dims();
    } else {
      for (std::size_t f = 0; f < n_modes; ++f)
        dims.push_back(shards.front().dim(f + 1));
    }
    double cells = 1.0;
    for (std::size_t d : dims) cells *= static_cast<double>(d);
    double patients = 0.0;
    for (const auto& s : shards) patients += static_cast<double>(s.dim(0));
    outcome = session.factor(dims, cells * patients);
  } catch (...) {
    coord_error = std::current_exception();
    for (auto& ch : coord_chans) ch->close();
  }
  for (auto& t : threads) t.join();
  for (auto& r : runs)
    if (r.error) std::rethrow_exception(r.error);
  if (coord_error) std::rethrow_exception(coord_error);

  TripResult result;
  for (std::size_t h = 0; h < cfg.k; ++h) {
    CpModel m;
    m.factors = runs[h].state.local_factors();
    m.mode_names = shards[h].mode_names();
    result.hospital_models.push_back(std::move(m));
  }
  result.global_factors = outcome.globals;
  result.trace = outcome.trace;

  PhaseBytes factor_bytes = session.factor_phase_bytes();
  factor_bytes.to_server += session.handshake_bytes().to_server;
  factor_bytes.to_hospitals += session.handshake_bytes().to_hospitals;
  result.timing = timing_model(outcome.hospital_seconds,
                               outcome.coordinator_seconds, factor_bytes,
                               session.align_compute_seconds(),
                               session.align_phase_bytes(),
                               cfg.link_bytes_per_sec);
  if (align_out) {
    align_out->per_hospital.clear();
    for (auto& r : runs) align_out->per_hospital.push_back(std::move(r.align));
    align_out->compute_seconds = session.align_compute_seconds();
    align_out->bytes = session.align_phase_bytes();
    align_out->max_attempts_used = session.align_attempts();
  }
  return result;
}

}  // namespace

TripResult run_trip(const std::vector<SparseTensor>& shards,
                    const FederationConfig& cfg, MessageLog* log) {
  return run_trip_impl(shards, cfg, false, nullptr, log);
}

TripResult run_trip_with_alignment(const std::vector<SparseTensor>& shards,
                                   const FederationConfig& cfg,
                                   AlignmentOutcome* align_out,
                                   MessageLog* log) {
  if (!cfg.align) return run_trip_impl(shards, cfg, false, nullptr, log);
  return run_trip_impl(shards, cfg, true, align_out, log);
}

AlignmentOutcome run_alignment(
    const std::vector<std::vector<std::vector<std::uint64_t>>>& vocabs,
    const FederationConfig& cfg, MessageLog* log) {
  cfg.validate();
  if (vocabs.size() != cfg.k)
    throw std::invalid_argument("vocabulary count does not match hospital count");
  AlignmentOutcome out;

  if (cfg.k == 1) {
    // single party: its sorted vocabulary is already the global order and
    // nothing needs to be exchanged
    std::vector<AlignmentResult> single;
    for (const auto& vocab : vocabs[0])
      single.push_back(plaintext_alignment({vocab})[0]);
    out.per_hospital.push_back(std::move(single));
    out.max_attempts_used = 0;
    return out;
  }

  const std::size_t n_modes = vocabs.front().size();
  for (const auto& v : vocabs)
    if (v.size() != n_modes)
      throw std::invalid_argument("hospitals disagree on feature mode count");

  auto [coord_chans, part_chans] = make_channels(cfg);
  std::vector<std::vector<AlignmentResult>> results(cfg.k);
  std::vector<std::exception_ptr> errors(cfg.k);
  std::vector<std::thread> threads;
  for (std::size_t h = 0; h < cfg.k; ++h) {
    threads.emplace_back([&, h] {
      try {
        ParticipantSession session(part_chans[h], static_cast<std::uint16_t>(h),
                                   cfg);
        session.handshake();
        results[h] = session.align(vocabs[h]);
      } catch (...) {
        errors[h] = std::current_exception();
        part_chans[h]->close();
      }
    });
  }

  std::exception_ptr coord_error;
  CoordinatorSession session(coord_chans, cfg, log);
  try {
    session.handshake();
    session.align(n_modes);
  } catch (...) {
    coord_error = std::current_exception();
    for (auto& ch : coord_chans) ch->close();
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  if (coord_error) std::rethrow_exception(coord_error);

  out.per_hospital = std::move(results);
  out.compute_seconds = session.align_compute_seconds();
  out.bytes = session.align_phase_bytes();
  out.bytes.to_server += session.handshake_bytes().to_server;
  out.bytes.to_hospitals += session.handshake_bytes().to_hospitals;
  out.max_attempts_used = session.align_attempts();
  return out;
}

}  // namespace trip
