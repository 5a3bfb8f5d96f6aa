#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "dyind/dyck.hpp"

namespace dyind {

inline constexpr int kNoEdge = -1;

// Partial DFA over {(, )}. A missing edge rejects immediately.
struct Fsa {
  std::vector<std::string> names;
  int initial = 0;
  std::vector<bool> accepting;
  std::vector<std::array<int, 2>> next;  // indexed by symbol_index

  std::size_t num_states() const { return names.size(); }
  std::size_t num_transitions() const;
  int add_state(std::string name, bool accept = false);
  void set_edge(int src, Symbol sym, int dst) { next[static_cast<std::size_t>(src)][symbol_index(sym)] = dst; }
  int edge(int src, Symbol sym) const { return next[static_cast<std::size_t>(src)][symbol_index(sym)]; }
  int find(const std::string& name) const;  // -1 if absent

  // Structural equality, names included.
  bool operator==(const Fsa&) const = default;
};

// Chain q0..qm; "(" goes up, ")" goes down, q0 initial and only accepting.
Fsa counter_fsa(int m);

bool fsa_accepts(const Fsa& fsa, const BracketString& s);

// Keeps states reachable from the initial state that can reach acceptance.
// A machine with an empty language becomes a single rejecting state.
Fsa trim(const Fsa& fsa);

// Breadth-first relabelling from the initial state, "(" before ")"; states
// are renamed q0, q1, ... and unreachable ones dropped.
Fsa canonical(const Fsa& fsa);

// Trim, partition refinement on the partial machine, then canonical order.
Fsa minimize(const Fsa& fsa);

// Compares canonical relabellings, accepting sets included. Meant for
// minimized machines; unreachable states are ignored.
bool fsa_isomorphic(const Fsa& a, const Fsa& b);

// Exhaustive agreement on all strings of length <= max_len (<= 24).
bool fsa_equiv_bounded(const Fsa& a, const Fsa& b, int max_len);

std::string fsa_to_json(const Fsa& fsa);
Fsa fsa_from_json(const std::string& text);
void write_fsa(const Fsa& fsa, const std::filesystem::path& path);
Fsa read_fsa(const std::filesystem::path& path);

}  // namespace dyind
