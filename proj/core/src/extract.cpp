#include "dyind/extract.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dyind/error.hpp"
#include "dyind/train.hpp"

namespace dyind {

void ExtractionConfig::validate() const {
  if (!(agreement_threshold > 0.5 && agreement_threshold <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "agreement_threshold must lie in (0.5, 1]");
  }
  if (probe_samples < 10) throw Error(ErrorCode::kInvalidArgument, "probe_samples must be >= 10");
  if (cluster_min < 1 || cluster_max < cluster_min) throw Error(ErrorCode::kInvalidArgument, "bad cluster range");
  if (max_probe_len < 0 || data_max_len < 2) throw Error(ErrorCode::kInvalidArgument, "bad probe lengths");
  if (level < 1) throw Error(ErrorCode::kInvalidArgument, "level must be >= 1");
  if (restarts < 1 || iterations < 1 || fit_points < 1) throw Error(ErrorCode::kInvalidArgument, "bad k-means budget");
}

std::vector<BracketString> probe_strings(int level, int n, int data_max_len, int uniform_max_len, Rng& rng) {
  if (uniform_max_len < 1 || uniform_max_len > 60) throw Error(ErrorCode::kInvalidArgument, "uniform probe length must lie in [1, 60]");
  std::vector<BracketString> out;
  const int from_data = n / 2;
  if (from_data > 0) {
    DatasetOptions opts;
    opts.max_length = std::max(data_max_len, 2);
    const auto ds = build_dataset(level, std::max(from_data, 10), rng.next_u64(), opts);
    for (const auto& s : ds.all()) {
      if (static_cast<int>(out.size()) == from_data) break;
      out.push_back(s.sequence);
    }
  }
  // Length l has 2^l strings, so the uniform draw picks l with that weight.
  std::vector<double> cum;
  double total = 0.0;
  for (int l = 1; l <= uniform_max_len; ++l) cum.push_back(total += std::ldexp(1.0, l));
  while (static_cast<int>(out.size()) < n) {
    const double u = rng.uniform() * total;
    const int len = 1 + static_cast<int>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    BracketString s;
    for (int i = 0; i < std::min(len, uniform_max_len); ++i) s.push_back(rng.bernoulli(0.5) ? Symbol::kOpen : Symbol::kClose);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

double sq_dist(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

int nearest_centroid(const KMeansResult& km, std::size_t dim, std::span<const double> x) {
  const std::size_t k = km.centroids.size() / dim;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double d = sq_dist(x.data(), km.centroids.data() + c * dim, dim);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

KMeansResult kmeans(const std::vector<double>& points, std::size_t dim, int k, int restarts, int iterations, Rng& rng) {
  const std::size_t n = points.size() / dim;
  if (n == 0 || k < 1) throw Error(ErrorCode::kInvalidArgument, "kmeans needs points and k >= 1");
  const auto kk = static_cast<std::size_t>(k);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  std::vector<int> assign(n);
  std::vector<double> d2(n);
  for (int r = 0; r < restarts; ++r) {
    std::vector<double> cent(kk * dim);
    // k-means++ seeding.
    std::size_t first = static_cast<std::size_t>(rng.below(n));
    std::copy_n(points.begin() + static_cast<std::ptrdiff_t>(first * dim), dim, cent.begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(&points[i * dim], cent.data(), dim);
    for (std::size_t c = 1; c < kk; ++c) {
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      std::size_t pick = 0;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        for (pick = 0; pick + 1 < n; ++pick) {
          u -= d2[pick];
          if (u < 0.0) break;
        }
      } else {
        pick = static_cast<std::size_t>(rng.below(n));
      }
      std::copy_n(points.begin() + static_cast<std::ptrdiff_t>(pick * dim), dim,
                  cent.begin() + static_cast<std::ptrdiff_t>(c * dim));
      for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(&points[i * dim], &cent[c * dim], dim));
    }
    KMeansResult cur{std::move(cent), 0.0};
    std::fill(assign.begin(), assign.end(), -1);
    for (int it = 0; it < iterations; ++it) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        const int a = nearest_centroid(cur, dim, std::span<const double>(&points[i * dim], dim));
        if (a != assign[i]) {
          assign[i] = a;
          changed = true;
        }
      }
      if (!changed) break;
      std::vector<double> sum(kk * dim, 0.0);
      std::vector<std::size_t> cnt(kk, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto a = static_cast<std::size_t>(assign[i]);
        ++cnt[a];
        for (std::size_t j = 0; j < dim; ++j) sum[a * dim + j] += points[i * dim + j];
      }
      // Empty clusters keep their previous centroid.
      for (std::size_t c = 0; c < kk; ++c) {
        if (cnt[c] == 0) continue;
        for (std::size_t j = 0; j < dim; ++j) cur.centroids[c * dim + j] = sum[c * dim + j] / static_cast<double>(cnt[c]);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int a = nearest_centroid(cur, dim, std::span<const double>(&points[i * dim], dim));
      cur.inertia += sq_dist(&points[i * dim], &cur.centroids[static_cast<std::size_t>(a) * dim], dim);
    }
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

namespace {

struct Event {
  std::size_t from;
  int sym;
  std::size_t to;
};

// Hidden states of the probe set, h_0 stored once at index 0.
struct Trace {
  std::size_t dim = 0;
  std::vector<double> points;
  std::vector<int> vote;  // 1 accept, 0 reject, -1 none (h_0)
  std::vector<Event> events;
  std::size_t split = 0;  // points before this index come from the first `split_probe` probes
};

Trace collect(const RnnParams& p, const std::vector<BracketString>& probes, std::size_t split_probe) {
  Trace tr;
  tr.dim = p.hidden_size;
  tr.points.assign(tr.dim, 0.0);
  tr.vote.push_back(-1);
  for (std::size_t pi = 0; pi < probes.size(); ++pi) {
    if (pi == split_probe) tr.split = tr.vote.size();
    const auto tokens = bracket_tokens(probes[pi]);
    const auto hs = rnn_hidden_states(p, tokens);
    std::size_t prev = 0;
    for (std::size_t t = 1; t < hs.size(); ++t) {
      const std::size_t idx = tr.vote.size();
      tr.points.insert(tr.points.end(), hs[t].begin(), hs[t].end());
      tr.vote.push_back(static_cast<int>(argmax(rnn_project(p, hs[t]))));
      tr.events.push_back({prev, tokens[t - 1], idx});
      prev = idx;
    }
  }
  return tr;
}

// Drops `q` and every edge into it.
Fsa without_state(const Fsa& f, int q) {
  Fsa g = f;
  for (auto& e : g.next) {
    for (int& d : e) {
      if (d == q) d = kNoEdge;
    }
  }
  g.next[static_cast<std::size_t>(q)] = {kNoEdge, kNoEdge};
  g.accepting[static_cast<std::size_t>(q)] = false;
  return minimize(g);
}

// Drops the `a` edge out of `q`.
Fsa without_edge(const Fsa& f, int q, int a) {
  Fsa g = f;
  g.next[static_cast<std::size_t>(q)][static_cast<std::size_t>(a)] = kNoEdge;
  return minimize(g);
}

// Majority-vote machine over cluster labels (label 0 .. k-1, h_0 included).
// `initial_accepts` decides the initial cluster when none of its points
// carries a vote.
Fsa quantized_machine(const Trace& tr, const std::vector<int>& label, int k, bool initial_accepts) {
  const auto kk = static_cast<std::size_t>(k);
  std::vector<std::array<std::vector<int>, 2>> counts(kk);
  for (auto& c : counts) c = {std::vector<int>(kk, 0), std::vector<int>(kk, 0)};
  std::vector<int> acc(kk, 0), rej(kk, 0);
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (tr.vote[i] == 1) ++acc[static_cast<std::size_t>(label[i])];
    if (tr.vote[i] == 0) ++rej[static_cast<std::size_t>(label[i])];
  }
  for (const auto& e : tr.events) {
    ++counts[static_cast<std::size_t>(label[e.from])][static_cast<std::size_t>(e.sym)]
            [static_cast<std::size_t>(label[e.to])];
  }
  Fsa f;
  for (std::size_t c = 0; c < kk; ++c) f.add_state("c" + std::to_string(c), acc[c] > rej[c]);
  f.initial = label[0];
  const auto init = static_cast<std::size_t>(f.initial);
  if (acc[init] + rej[init] == 0) f.accepting[init] = initial_accepts;
  for (std::size_t c = 0; c < kk; ++c) {
    for (int a = 0; a < 2; ++a) {
      const auto& row = counts[c][static_cast<std::size_t>(a)];
      const auto it = std::max_element(row.begin(), row.end());  // first maximum = lowest cluster
      // Only a strict majority survives; a split vote leaves no edge.
      const int tot = std::accumulate(row.begin(), row.end(), 0);
      if (2 * *it > tot) f.next[c][static_cast<std::size_t>(a)] = static_cast<int>(it - row.begin());
    }
  }
  return f;
}

}  // namespace

ExtractionResult extract_fsa(const RnnParams& classifier, const ExtractionConfig& cfg) {
  cfg.validate();
  if (classifier.task != Task::kClassifier) throw Error(ErrorCode::kInvalidArgument, "extraction needs a classifier");
  Rng rng(cfg.seed);
  const auto probes = probe_strings(cfg.level, cfg.probe_samples, cfg.data_max_len, cfg.uniform_len(), rng);
  Rng fresh_rng = rng.fork();
  const auto fresh = probe_strings(cfg.level, cfg.probe_samples, cfg.data_max_len, cfg.uniform_len(), fresh_rng);
  std::vector<bool> rnn_says(fresh.size());
  for (std::size_t i = 0; i < fresh.size(); ++i) rnn_says[i] = classify(classifier, fresh[i]) == Label::kValid;

  const Trace tr = collect(classifier, probes, static_cast<std::size_t>(cfg.probe_samples / 2));
  const std::size_t n = tr.vote.size();
  const std::size_t dim = tr.dim;

  if (tr.split < 2) throw Error(ErrorCode::kInvalidArgument, "probes produced no hidden states");
  // h_0 is never clustered: it becomes a state of its own, so the start of
  // the run cannot be confused with some later region of hidden space.
  // k-means is fitted on the dataset half only; uniform probes spend most of
  // their length past a rejection, and those states would crowd out the
  // chain states.
  std::vector<std::size_t> idx(tr.split - 1);
  std::iota(idx.begin(), idx.end(), std::size_t{1});
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(std::min(idx.size(), static_cast<std::size_t>(cfg.fit_points)));
  std::vector<double> fit;
  fit.reserve(idx.size() * dim);
  for (std::size_t i : idx) fit.insert(fit.end(), tr.points.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                       tr.points.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));

  auto fidelity_of = [&](const Fsa& f) {
    std::size_t agree = 0;
    for (std::size_t i = 0; i < fresh.size(); ++i) agree += fsa_accepts(f, fresh[i]) == rnn_says[i] ? 1 : 0;
    return static_cast<double>(agree) / static_cast<double>(fresh.size());
  };

  ExtractionResult best;
  best.fidelity = -1.0;
  best.warning = true;
  for (int k = cfg.cluster_min; k <= cfg.cluster_max; ++k) {
    const auto km = kmeans(fit, dim, k, cfg.restarts, cfg.iterations, rng);
    std::vector<int> label(n);
    label[0] = k;
    for (std::size_t i = 1; i < n; ++i) {
      label[i] = nearest_centroid(km, dim, std::span<const double>(&tr.points[i * dim], dim));
    }
    // The initial state carries no vote, so its acceptance is a free choice;
    // take whichever minimizes to fewer states.
    Fsa m = minimize(quantized_machine(tr, label, k + 1, false));
    const Fsa alt = minimize(quantized_machine(tr, label, k + 1, true));
    if (alt.num_states() < m.num_states()) m = alt;
    double fid = fidelity_of(m);
    // Flipping the initial state's acceptance is free while no probe comes
    // back to it; keep the flip when it shrinks the machine.
    auto settle_initial = [&] {
      Fsa flip = m;
      const auto init = static_cast<std::size_t>(flip.initial);
      flip.accepting[init] = !flip.accepting[init];
      flip = minimize(flip);
      if (flip.num_states() >= m.num_states()) return;
      const double f = fidelity_of(flip);
      if (f >= fid) {
        m = std::move(flip);
        fid = f;
      }
    };
    settle_initial();
    // Greedy pruning: drop the state or edge whose loss costs the least
    // agreement, as long as agreement stays above the threshold or does not
    // drop.
    for (;;) {
      Fsa best_cut;
      double best_fid = -1.0;
      auto consider = [&](Fsa cut) {
        const double f = fidelity_of(cut);
        if (f > best_fid) {
          best_fid = f;
          best_cut = std::move(cut);
        }
      };
      for (int q = 0; q < static_cast<int>(m.num_states()); ++q) {
        if (q != m.initial) consider(without_state(m, q));
        for (int a = 0; a < 2; ++a) {
          if (m.next[static_cast<std::size_t>(q)][static_cast<std::size_t>(a)] != kNoEdge) consider(without_edge(m, q, a));
        }
      }
      if (best_fid < 0.0 || (best_fid < cfg.agreement_threshold && best_fid < fid)) break;
      m = std::move(best_cut);
      fid = best_fid;
      settle_initial();
    }
    best.sweep.emplace_back(k, fid);
    if (fid > best.fidelity || fid >= cfg.agreement_threshold) {
      best.fsa = m;
      best.fidelity = fid;
      best.clusters = k;
    }
    if (fid >= cfg.agreement_threshold) {
      best.warning = false;
      break;
    }
  }
  return best;
}

RnnParams rnn_from_fsa(const Fsa& fsa, double gain) {
  const std::size_t n = fsa.num_states();
  // unit_of[q][a]: unit meaning "in state q, last symbol a"; -1 if q has no
  // incoming a-edge.
  std::vector<std::array<int, 2>> unit_of(n, {-1, -1});
  int units = 0;
  for (std::size_t p = 0; p < n; ++p) {
    for (int a = 0; a < 2; ++a) {
      const int q = fsa.next[p][static_cast<std::size_t>(a)];
      if (q != kNoEdge && unit_of[static_cast<std::size_t>(q)][static_cast<std::size_t>(a)] < 0) {
        unit_of[static_cast<std::size_t>(q)][static_cast<std::size_t>(a)] = units++;
      }
    }
  }
  const auto H = static_cast<std::size_t>(units + 1);
  const std::size_t s = H - 1;  // started unit
  Rng unused(0);
  RnnParams p = RnnParams::init(Task::kClassifier, 2, 2, H, 2, true, unused);
  p.w_ih = Matrix(H, 2);
  p.w_hh = Matrix(H, H);
  p.b_h.assign(H, 0.0);
  p.w_out = Matrix(2, H);
  p.b_out.assign(2, 0.0);
  p.b_h[s] = gain;

  // Indicator of unit u is (h_u + h_s) / 2, zero at t = 0; "at start" is 1 - h_s.
  for (std::size_t q = 0; q < n; ++q) {
    for (int a = 0; a < 2; ++a) {
      const int u = unit_of[q][static_cast<std::size_t>(a)];
      if (u < 0) continue;
      const auto uu = static_cast<std::size_t>(u);
      // pre = gain * ([x = a] + sum_pred I + [delta(init, a) = q] (1 - h_s) - 1.5)
      p.w_ih(uu, static_cast<std::size_t>(a)) = gain;
      double bias = -1.5;
      for (std::size_t pr = 0; pr < n; ++pr) {
        if (fsa.next[pr][static_cast<std::size_t>(a)] != static_cast<int>(q)) continue;
        for (int b = 0; b < 2; ++b) {
          const int v = unit_of[pr][static_cast<std::size_t>(b)];
          if (v < 0) continue;
          p.w_hh(uu, static_cast<std::size_t>(v)) += gain / 2.0;
          p.w_hh(uu, s) += gain / 2.0;
        }
      }
      if (fsa.next[static_cast<std::size_t>(fsa.initial)][static_cast<std::size_t>(a)] == static_cast<int>(q)) {
        bias += 1.0;
        p.w_hh(uu, s) -= gain;
      }
      p.b_h[uu] = gain * bias;
    }
  }
  // Valid logit minus invalid logit = gain * (sum_{accepting} I + [init accepts] (1 - h_s) - 0.5).
  double out_bias = -0.5;
  for (std::size_t q = 0; q < n; ++q) {
    if (!fsa.accepting[q]) continue;
    for (int a = 0; a < 2; ++a) {
      const int u = unit_of[q][static_cast<std::size_t>(a)];
      if (u < 0) continue;
      p.w_out(1, static_cast<std::size_t>(u)) += gain / 2.0;
      p.w_out(1, s) += gain / 2.0;
    }
  }
  if (fsa.accepting[static_cast<std::size_t>(fsa.initial)]) {
    out_bias += 1.0;
    p.w_out(1, s) -= gain;
  }
  p.b_out[1] = gain * out_bias;
  return p;
}

}  // namespace dyind
