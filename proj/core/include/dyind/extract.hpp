#pragma once

#include <cstdint>
#include <vector>

#include "dyind/fsa.hpp"
#include "dyind/rnn.hpp"

namespace dyind {

struct ExtractionConfig {
  int probe_samples = 10000;
  int cluster_min = 1;
  int cluster_max = 30;
  double agreement_threshold = 0.995;
  // Uniform-half length bound; 0 means 2 * level + 2, the longest string
  // whose depth can exceed the level by one.
  int max_probe_len = 0;
  int data_max_len = 20;  // length bound of the dataset half
  std::uint64_t seed = 1;
  int level = 1;  // depth bound of the training-distribution half of the probes
  int restarts = 50;
  int iterations = 100;
  // k-means is fitted on at most this many hidden states, then every state is
  // assigned to its nearest centroid.
  int fit_points = 4000;

  int uniform_len() const { return max_probe_len > 0 ? max_probe_len : 2 * level + 2; }
  // Throws INVALID_ARGUMENT.
  void validate() const;
};

struct ExtractionResult {
  Fsa fsa;  // minimized, canonical order
  double fidelity = 0.0;
  int clusters = 0;
  // Set when no cluster count met the threshold; fsa is then the most
  // faithful candidate.
  bool warning = false;
  std::vector<std::pair<int, double>> sweep;  // (clusters, fidelity)
};

// Probe strings: half drawn from the level's dataset distribution (lengths up
// to data_max_len), half uniform over all strings of length 1..uniform_max_len.
std::vector<BracketString> probe_strings(int level, int n, int data_max_len, int uniform_max_len, Rng& rng);

struct KMeansResult {
  std::vector<double> centroids;  // k x dim, row-major
  double inertia = 0.0;
};

// Lloyd iterations from k-means++ seeds; the restart with the lowest inertia
// wins. Stops a restart early once assignments settle.
KMeansResult kmeans(const std::vector<double>& points, std::size_t dim, int k, int restarts, int iterations, Rng& rng);
int nearest_centroid(const KMeansResult& km, std::size_t dim, std::span<const double> x);

ExtractionResult extract_fsa(const RnnParams& classifier, const ExtractionConfig& cfg);

// A classifier RNN that simulates `fsa` exactly with saturated tanh units:
// one unit per (state, arriving symbol) pair plus a unit that switches on
// after the first step. `gain` sets the saturation margin.
RnnParams rnn_from_fsa(const Fsa& fsa, double gain = 20.0);

}  // namespace dyind
