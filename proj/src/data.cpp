#include "trip/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "trip/rng.hpp"

namespace trip {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ls(line);
  while (std::getline(ls, item, ',')) {
    std::size_t b = 0, e = item.size();
    while (b < e && std::isspace(static_cast<unsigned char>(item[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(item[e - 1]))) --e;
    out.push_back(item.substr(b, e - b));
  }
  return out;
}

// ISO-8601 "YYYY-MM-DD[Thh:mm:ss[Z]]" or plain seconds since the epoch
double parse_timestamp(const std::string& s) {
  if (s.size() >= 10 && s[4] == '-' && s[7] == '-') {
    std::tm tm{};
    std::istringstream in(s);
    in >> std::get_time(&tm, s.find('T') != std::string::npos
                                 ? "%Y-%m-%dT%H:%M:%S"
                                 : "%Y-%m-%d");
    if (in.fail()) throw std::invalid_argument("bad timestamp: " + s);
    return static_cast<double>(timegm(&tm));
  }
  std::size_t used = 0;
  const double t = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad timestamp: " + s);
  return t;
}

}  // namespace

std::vector<EventRecord> read_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open event file: " + path);
  std::vector<EventRecord> out;
  std::string line;
  std::size_t lineno = 0;
  // header line is required; columns are matched by name so either the
  // canonical patient_id,kind,code,timestamp order or any permutation works
  int c_patient = -1, c_kind = -1, c_code = -1, c_ts = -1, width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv(line);
    if (c_patient < 0) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == "patient_id") c_patient = static_cast<int>(i);
        else if (cells[i] == "kind") c_kind = static_cast<int>(i);
        else if (cells[i] == "code") c_code = static_cast<int>(i);
        else if (cells[i] == "timestamp" || cells[i] == "timestamp_iso8601")
          c_ts = static_cast<int>(i);
      }
      if (c_patient < 0 || c_kind < 0 || c_code < 0 || c_ts < 0)
        throw std::runtime_error(
            path + ": header must name patient_id, kind, code, timestamp");
      width = static_cast<int>(cells.size());
      continue;
    }
    if (static_cast<int>(cells.size()) != width)
      throw std::runtime_error(path + ": malformed event at line " +
                               std::to_string(lineno));
    EventRecord r;
    r.patient = cells[c_patient];
    r.kind = cells[c_kind];
    try {
      r.timestamp = parse_timestamp(cells[c_ts]);
      std::size_t used = 0;
      r.code = std::stoull(cells[c_code], &used);
      if (used != cells[c_code].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": bad value at line " +
                               std::to_string(lineno));
    }
    if (r.patient.empty())
      throw std::runtime_error(path + ": empty patient_id at line " +
                               std::to_string(lineno));
    out.push_back(std::move(r));
  }
  if (c_patient < 0)
    throw std::runtime_error(path + ": missing header line");
  return out;
}

BuiltTensor build_co_occurrence_tensor(const std::vector<EventRecord>& events,
                                       const CoOccurrenceSpec& spec) {
  if (spec.window_seconds < 0) throw std::invalid_argument("window must be >= 0");
  if (spec.cap < 0) throw std::invalid_argument("cap must be >= 0");

  std::set<std::string> patients;
  std::set<std::uint64_t> codes_a, codes_b;
  for (const auto& e : events) {
    patients.insert(e.patient);
    if (e.kind == spec.kind_a) codes_a.insert(e.code);
    if (e.kind == spec.kind_b) codes_b.insert(e.code);
  }

  BuiltTensor out;
  out.patient_ids.assign(patients.begin(), patients.end());
  out.feature_vocabs.push_back({codes_a.begin(), codes_a.end()});
  out.feature_vocabs.push_back({codes_b.begin(), codes_b.end()});

  std::map<std::string, std::uint32_t> patient_row;
  for (std::size_t i = 0; i < out.patient_ids.size(); ++i)
    patient_row[out.patient_ids[i]] = static_cast<std::uint32_t>(i);
  std::map<std::uint64_t, std::uint32_t> col_a, col_b;
  for (std::size_t i = 0; i < out.feature_vocabs[0].size(); ++i)
    col_a[out.feature_vocabs[0][i]] = static_cast<std::uint32_t>(i);
  for (std::size_t i = 0; i < out.feature_vocabs[1].size(); ++i)
    col_b[out.feature_vocabs[1][i]] = static_cast<std::uint32_t>(i);

  // per patient, count co-occurring (code_a, code_b) pairs inside the window
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>, double> counts;
  std::map<std::string, std::vector<const EventRecord*>> a_by_patient, b_by_patient;
  for (const auto& e : events) {
    if (e.kind == spec.kind_a) a_by_patient[e.patient].push_back(&e);
    if (e.kind == spec.kind_b) b_by_patient[e.patient].push_back(&e);
  }
  for (const auto& [patient, as] : a_by_patient) {
    auto bt = b_by_patient.find(patient);
    if (bt == b_by_patient.end()) continue;
    const std::uint32_t row = patient_row[patient];
    for (const EventRecord* a : as)
      for (const EventRecord* b : bt->second)
        if (std::abs(a->timestamp - b->timestamp) <= spec.window_seconds)
          counts[{row, col_a[a->code], col_b[b->code]}] += 1.0;
  }

  std::vector<std::uint32_t> idx;
  std::vector<double> val;
  for (const auto& [key, count] : counts) {
    idx.push_back(std::get<0>(key));
    idx.push_back(std::get<1>(key));
    idx.push_back(std::get<2>(key));
    val.push_back(spec.cap > 0 ? std::min(count, spec.cap) : count);
  }

  std::vector<std::size_t> shape = {
      out.patient_ids.size(),
      std::max<std::size_t>(out.feature_vocabs[0].size(), 1),
      std::max<std::size_t>(out.feature_vocabs[1].size(), 1)};
  if (out.patient_ids.empty()) throw std::runtime_error("no events to build from");
  out.tensor = SparseTensor(std::move(shape), std::move(idx), std::move(val),
                            {"patient", spec.kind_a, spec.kind_b});
  return out;
}

SyntheticTensor synthesize_tensor(const SyntheticSpec& spec) {
  if (spec.shape.size() < 2)
    throw std::invalid_argument("synthetic tensor needs at least two modes");
  if (spec.rank < 1) throw std::invalid_argument("rank must be >= 1");
  if (spec.noise_sd < 0) throw std::invalid_argument("noise_sd must be >= 0");
  if (spec.quantize && spec.cap <= 0)
    throw std::invalid_argument("quantization needs a positive cap");

  SyntheticTensor out;
  for (std::size_t m = 0; m < spec.shape.size(); ++m) {
    Rng rng(mix_seed(spec.seed, m, 0x5EED));
    Mat f(spec.shape[m], spec.rank);
    for (std::size_t i = 0; i < spec.shape[m]; ++i)
      for (int r = 0; r < spec.rank; ++r) f(i, static_cast<Eigen::Index>(r)) = rng.uniform01();
    out.ground_truth.factors.push_back(std::move(f));
  }

  Rng noise(mix_seed(spec.seed, 0xB0CE, 0x015E));
  const std::size_t order = spec.shape.size();
  std::vector<std::uint32_t> cursor(order, 0);
  std::vector<std::uint32_t> idx;
  std::vector<double> val;
  // walk cells in lexicographic order so the noise stream is pinned
  while (true) {
    double x = 0.0;
    for (int r = 0; r < spec.rank; ++r) {
      double p = 1.0;
      for (std::size_t m = 0; m < order; ++m)
        p *= out.ground_truth.factors[m](cursor[m], r);
      x += p;
    }
    if (spec.noise_sd > 0) x += spec.noise_sd * noise.gaussian();
    double v;
    if (spec.quantize) {
      v = std::round(x);
      if (v < 0) v = 0;
      if (v > spec.cap) v = spec.cap;
    } else {
      v = std::max(x, 0.0);
    }
    if (v > 0) {
      idx.insert(idx.end(), cursor.begin(), cursor.end());
      val.push_back(v);
    }
    std::size_t m = order;
    while (m-- > 0) {
      if (++cursor[m] < spec.shape[m]) break;
      cursor[m] = 0;
      if (m == 0) {
        out.tensor = SparseTensor(spec.shape, std::move(idx), std::move(val));
        return out;
      }
    }
  }
}

PartitionPlan make_partition_plan(std::size_t patients, std::size_t k,
                                  double skew, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("need at least one hospital");
  if (patients < k)
    throw std::invalid_argument("every hospital needs at least one patient");
  if (skew <= 0.0 || skew >= 1.0) {
    if (k != 1 || skew != 1.0)
      throw std::invalid_argument("skew must lie in (0, 1)");
  }

  std::vector<std::size_t> counts(k, 0);
  if (k == 1) {
    counts[0] = patients;
  } else if (std::abs(skew - 1.0 / static_cast<double>(k)) < 1e-9) {
    const std::size_t base = patients / k, extra = patients % k;
    for (std::size_t h = 0; h < k; ++h) counts[h] = base + (h < extra ? 1 : 0);
  } else {
    counts[0] = static_cast<std::size_t>(std::floor(
        skew * static_cast<double>(patients)));
    const std::size_t rest = patients - counts[0];
    const std::size_t base = rest / (k - 1), extra = rest % (k - 1);
    for (std::size_t h = 1; h < k; ++h)
      counts[h] = base + (h - 1 < extra ? 1 : 0);
    // minimum occupancy: move single patients from the largest hospital
    for (std::size_t h = 0; h < k; ++h) {
      while (counts[h] == 0) {
        std::size_t donor = 0;
        for (std::size_t d = 1; d < k; ++d)
          if (counts[d] > counts[donor]) donor = d;
        if (counts[donor] <= 1)
          throw std::invalid_argument("cannot give every hospital a patient");
        --counts[donor];
        ++counts[h];
      }
    }
  }

  std::vector<std::uint32_t> ids(patients);
  for (std::size_t i = 0; i < patients; ++i) ids[i] = static_cast<std::uint32_t>(i);
  Rng rng(mix_seed(seed, 0x9A27, k));
  for (std::size_t i = patients; i > 1; --i)
    std::swap(ids[i - 1], ids[rng.uniform_below(i)]);

  PartitionPlan plan;
  plan.total_patients = patients;
  std::size_t at = 0;
  for (std::size_t h = 0; h < k; ++h) {
    std::vector<std::uint32_t> mine(ids.begin() + at, ids.begin() + at + counts[h]);
    std::sort(mine.begin(), mine.end());
    plan.patients.push_back(std::move(mine));
    at += counts[h];
  }
  return plan;
}

std::vector<SparseTensor> partition_patients(const SparseTensor& t,
                                             const PartitionPlan& plan) {
  if (plan.total_patients != t.dim(0))
    throw std::invalid_argument("plan does not match the tensor's patient count");
  const std::size_t n = t.order();

  std::vector<std::uint32_t> owner(t.dim(0)), local_row(t.dim(0));
  std::vector<char> seen(t.dim(0), 0);
  for (std::size_t h = 0; h < plan.hospitals(); ++h) {
    for (std::size_t r = 0; r < plan.patients[h].size(); ++r) {
      const std::uint32_t g = plan.patients[h][r];
      if (g >= t.dim(0) || seen[g])
        throw std::invalid_argument("partition plan is not a disjoint cover");
      seen[g] = 1;
      owner[g] = static_cast<std::uint32_t>(h);
      local_row[g] = static_cast<std::uint32_t>(r);
    }
  }
  for (char s : seen)
    if (!s) throw std::invalid_argument("partition plan misses a patient");

  std::vector<std::vector<std::uint32_t>> idx(plan.hospitals());
  std::vector<std::vector<double>> val(plan.hospitals());
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    const std::uint32_t g = t.index(e, 0);
    const std::uint32_t h = owner[g];
    idx[h].push_back(local_row[g]);
    for (std::size_t m = 1; m < n; ++m) idx[h].push_back(t.index(e, m));
    val[h].push_back(t.value(e));
  }

  std::vector<SparseTensor> shards;
  for (std::size_t h = 0; h < plan.hospitals(); ++h) {
    std::vector<std::size_t> shape = t.shape();
    shape[0] = plan.patients[h].size();
    shards.emplace_back(std::move(shape), std::move(idx[h]), std::move(val[h]),
                        t.mode_names());
  }
  return shards;
}

SparseTensor concatenate_patients(const std::vector<SparseTensor>& shards,
                                  const PartitionPlan& plan) {
  if (shards.size() != plan.hospitals())
    throw std::invalid_argument("shard count does not match the plan");
  const std::size_t n = shards.empty() ? 0 : shards.front().order();
  std::vector<std::uint32_t> idx;
  std::vector<double> val;
  for (std::size_t h = 0; h < shards.size(); ++h) {
    const SparseTensor& s = shards[h];
    if (s.dim(0) != plan.patients[h].size())
      throw std::invalid_argument("shard patient count does not match the plan");
    for (std::size_t e = 0; e < s.nnz(); ++e) {
      idx.push_back(plan.patients[h][s.index(e, 0)]);
      for (std::size_t m = 1; m < n; ++m) idx.push_back(s.index(e, m));
      val.push_back(s.value(e));
    }
  }
  std::vector<std::size_t> shape = shards.front().shape();
  shape[0] = plan.total_patients;
  return SparseTensor(std::move(shape), std::move(idx), std::move(val),
                      shards.front().mode_names());
}

}  // namespace trip
