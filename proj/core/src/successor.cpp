#include "dyind/successor.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dyind/error.hpp"
#include "dyind/train.hpp"

namespace dyind {

bool is_letter(int token) { return token >= 0 && token < tok::kLetters; }

char letter_char(int token) {
  if (!is_letter(token)) throw Error(ErrorCode::kInvalidArgument, "not a letter token: " + std::to_string(token));
  return token < 26 ? static_cast<char>('a' + token) : static_cast<char>('A' + token - 26);
}

int letter_token(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c >= 'A' && c <= 'Z') return 26 + (c - 'A');
  return -1;
}

std::string token_text(int token) {
  if (is_letter(token)) return std::string(1, letter_char(token));
  switch (token) {
    case tok::kOpen: return "(";
    case tok::kClose: return ")";
    case tok::kHash: return "#";
    case tok::kNewState: return "<ns>";
    case tok::kSep: return "<sep>";
    case tok::kEos: return "<eos>";
    case tok::kPad: return "<pad>";
    default: throw Error(ErrorCode::kTokenOutOfVocab, "token id " + std::to_string(token));
  }
}

int token_id(std::string_view text) {
  if (text.size() == 1) {
    const int l = letter_token(text[0]);
    if (l >= 0) return l;
    if (text[0] == '(') return tok::kOpen;
    if (text[0] == ')') return tok::kClose;
    if (text[0] == '#') return tok::kHash;
  }
  if (text == "<ns>") return tok::kNewState;
  if (text == "<sep>") return tok::kSep;
  if (text == "<eos>") return tok::kEos;
  throw Error(ErrorCode::kParseError, "unknown token '" + std::string(text) + "'");
}

std::string tokens_to_text(const std::vector<int>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += token_text(tokens[i]);
  }
  return out;
}

std::vector<int> tokens_from_text(std::string_view text) {
  std::vector<int> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(token_id(word));
  return out;
}

NamingMap NamingMap::random(std::size_t n_states, Rng& rng) {
  if (n_states > static_cast<std::size_t>(tok::kLetters)) {
    throw Error(ErrorCode::kTooManyStates, std::to_string(n_states) + " states exceed the 52 letter names");
  }
  std::vector<int> letters(tok::kLetters);
  std::iota(letters.begin(), letters.end(), 0);
  rng.shuffle(std::span<int>(letters));
  letters.resize(n_states);
  return NamingMap{letters};
}

NamingMap NamingMap::from_string(std::string_view letters) {
  NamingMap m;
  for (char c : letters) {
    const int t = letter_token(c);
    if (t < 0) throw Error(ErrorCode::kInvalidArgument, std::string("not a letter: ") + c);
    if (std::find(m.letter.begin(), m.letter.end(), t) != m.letter.end()) {
      throw Error(ErrorCode::kInvalidArgument, std::string("letter used twice: ") + c);
    }
    m.letter.push_back(t);
  }
  return m;
}

namespace {

struct Triple {
  int src;
  int sym;  // tok::kOpen or tok::kClose
  int dst;
};

// States in breadth-first order, "(" before ")".
std::vector<int> bfs_order(const Fsa& fsa) {
  std::vector<int> order;
  std::vector<bool> seen(fsa.num_states(), false);
  std::deque<int> queue{fsa.initial};
  seen[static_cast<std::size_t>(fsa.initial)] = true;
  while (!queue.empty()) {
    const int q = queue.front();
    queue.pop_front();
    order.push_back(q);
    for (Symbol s : kAlphabet) {
      const int d = fsa.edge(q, s);
      if (d != kNoEdge && !seen[static_cast<std::size_t>(d)]) {
        seen[static_cast<std::size_t>(d)] = true;
        queue.push_back(d);
      }
    }
  }
  return order;
}

std::vector<Triple> canonical_triples(const Fsa& fsa) {
  std::vector<Triple> out;
  for (int q : bfs_order(fsa)) {
    for (Symbol s : {Symbol::kClose, Symbol::kOpen}) {
      const int d = fsa.edge(q, s);
      if (d != kNoEdge) out.push_back({q, s == Symbol::kOpen ? tok::kOpen : tok::kClose, d});
    }
  }
  return out;
}

void check_encodable(const Fsa& fsa) {
  if (fsa.num_states() > static_cast<std::size_t>(tok::kLetters)) {
    throw Error(ErrorCode::kTooManyStates, std::to_string(fsa.num_states()) + " states exceed the 52 letter names");
  }
  for (std::size_t q = 0; q < fsa.num_states(); ++q) {
    if (fsa.accepting[q] != (static_cast<int>(q) == fsa.initial)) {
      throw Error(ErrorCode::kNonstandardAccepting, "accepting set must be exactly the initial state");
    }
  }
}

}  // namespace

SymbolicEncoding encode_fsa(const Fsa& fsa, const NamingMap& naming, bool shuffle, Rng& rng) {
  check_encodable(fsa);
  if (naming.letter.size() != fsa.num_states()) {
    throw Error(ErrorCode::kInvalidArgument, "naming covers " + std::to_string(naming.letter.size()) + " of " +
                                                 std::to_string(fsa.num_states()) + " states");
  }
  auto triples = canonical_triples(fsa);
  if (shuffle) rng.shuffle(std::span<Triple>(triples));
  auto name = [&](int q) { return naming.letter[static_cast<std::size_t>(q)]; };
  SymbolicEncoding enc;
  enc.tokens.push_back(name(fsa.initial));
  for (const auto& t : triples) {
    enc.tokens.insert(enc.tokens.end(), {tok::kHash, name(t.src), t.sym, name(t.dst)});
  }
  return enc;
}

SymbolicEncoding encode_fsa(const Fsa& fsa, const NamingMap& naming) {
  Rng unused(0);
  return encode_fsa(fsa, naming, false, unused);
}

Fsa decode_encoding(const std::vector<int>& tokens) {
  auto fail = [&](std::size_t pos, const std::string& what) {
    throw Error(ErrorCode::kParseError, "at token " + std::to_string(pos) + ": " + what);
  };
  Fsa f;
  auto state_of = [&](std::size_t pos) {
    if (pos >= tokens.size()) fail(pos, "unexpected end, expected a state name");
    if (!is_letter(tokens[pos])) fail(pos, "expected a state name, got '" + token_text(tokens[pos]) + "'");
    const std::string name(1, letter_char(tokens[pos]));
    int q = f.find(name);
    if (q < 0) q = f.add_state(name, f.num_states() == 0);
    return q;
  };
  if (tokens.empty()) fail(0, "empty encoding");
  f.initial = state_of(0);
  std::size_t pos = 1;
  while (pos < tokens.size()) {
    if (tokens[pos] != tok::kHash) fail(pos, "expected '#', got '" + token_text(tokens[pos]) + "'");
    const int src = state_of(pos + 1);
    if (pos + 2 >= tokens.size()) fail(pos + 2, "unexpected end, expected a bracket");
    const int sym = tokens[pos + 2];
    if (sym != tok::kOpen && sym != tok::kClose) fail(pos + 2, "expected a bracket, got '" + token_text(sym) + "'");
    const int dst = state_of(pos + 3);
    const Symbol s = sym == tok::kOpen ? Symbol::kOpen : Symbol::kClose;
    const int old = f.edge(src, s);
    if (old != kNoEdge && old != dst) {
      throw Error(ErrorCode::kDuplicateEdge, "state " + f.names[static_cast<std::size_t>(src)] + " has two '" +
                                                 token_text(sym) + "' edges (token " + std::to_string(pos) + ")");
    }
    f.set_edge(src, s, dst);
    pos += 4;
  }
  return f;
}

TrainingInstance instance_from_tokens(std::vector<int> tokens) {
  const auto n_sep = std::count(tokens.begin(), tokens.end(), tok::kSep);
  const auto n_eos = std::count(tokens.begin(), tokens.end(), tok::kEos);
  if (n_sep != 1 || n_eos != 1 || tokens.back() != tok::kEos) {
    throw Error(ErrorCode::kParseError, "instance needs one <sep> and a single trailing <eos>");
  }
  if (std::find(tokens.begin(), tokens.end(), tok::kPad) != tokens.end()) {
    throw Error(ErrorCode::kParseError, "PAD inside an instance");
  }
  const auto sep = static_cast<std::size_t>(std::find(tokens.begin(), tokens.end(), tok::kSep) - tokens.begin());
  TrainingInstance inst;
  inst.loss_mask.assign(tokens.size(), false);
  for (std::size_t j = sep + 1; j < tokens.size(); ++j) inst.loss_mask[j] = true;
  inst.tokens = std::move(tokens);
  return inst;
}

int deepest_state(const Fsa& fsa) {
  int found = -1;
  for (std::size_t q = 0; q < fsa.num_states(); ++q) {
    if (fsa.next[q][symbol_index(Symbol::kOpen)] != kNoEdge) continue;
    if (found >= 0) throw Error(ErrorCode::kNotAChain, "more than one state lacks a '(' edge");
    found = static_cast<int>(q);
  }
  if (found < 0) throw Error(ErrorCode::kNotAChain, "every state has a '(' edge");
  return found;
}

TrainingInstance build_instance(const Fsa& fsa_k, const NamingMap& naming, Rng& rng, bool shuffle) {
  if (fsa_k.num_states() >= static_cast<std::size_t>(tok::kLetters)) {
    throw Error(ErrorCode::kTooManyStates, "no letter left for the successor state");
  }
  const int t = deepest_state(fsa_k);
  auto tokens = encode_fsa(fsa_k, naming, shuffle, rng).tokens;
  const int name = naming.letter[static_cast<std::size_t>(t)];
  tokens.push_back(tok::kSep);
  tokens.insert(tokens.end(),
                {tok::kHash, name, tok::kOpen, tok::kNewState, tok::kHash, tok::kNewState, tok::kClose, name, tok::kEos});
  return instance_from_tokens(std::move(tokens));
}

TrainingInstance build_instance(const Fsa& fsa_k, Rng& rng, bool shuffle) {
  const auto naming = NamingMap::random(fsa_k.num_states(), rng);
  return build_instance(fsa_k, naming, rng, shuffle);
}

std::vector<TrainingInstance> build_training_set(const std::vector<int>& steps, int n_per_step, bool shuffle, Rng& rng) {
  std::vector<TrainingInstance> out;
  for (int k : steps) {
    const Fsa f = counter_fsa(k);
    for (int i = 0; i < n_per_step; ++i) out.push_back(build_instance(f, rng, shuffle));
  }
  return out;
}

Fsa apply_ind(const RnnParams& lm, const Fsa& fsa, Rng& rng, bool shuffle) {
  const Fsa m = minimize(fsa);
  if (m.num_states() > static_cast<std::size_t>(tok::kLetters)) {
    throw Error(ErrorCode::kNameExhausted, std::to_string(m.num_states()) + " states cannot be named with 52 letters");
  }
  const int deepest = deepest_state(m);
  const auto naming = NamingMap::random(m.num_states(), rng);
  auto prefix = encode_fsa(m, naming, shuffle, rng).tokens;
  prefix.push_back(tok::kSep);
  auto gen = greedy_decode(lm, prefix, tok::kEos, kMaxGeneratedTokens);

  auto malformed = [&](const std::string& why) {
    throw Error(ErrorCode::kMalformedGeneration, why + ": \"" + tokens_to_text(gen) + "\"");
  };
  if (gen.empty() || gen.back() != tok::kEos) malformed("no <eos> within " + std::to_string(kMaxGeneratedTokens) + " tokens");
  gen.pop_back();
  if (std::count(gen.begin(), gen.end(), tok::kNewState) != 2) malformed("expected exactly two <ns>");
  if (gen.empty() || gen.size() % 4 != 0) malformed("continuation is not a list of triples");

  std::vector<int> state_of(tok::kLetters, -1);
  for (std::size_t q = 0; q < naming.letter.size(); ++q) state_of[static_cast<std::size_t>(naming.letter[q])] = static_cast<int>(q);
  // Both <ns> tokens bind to one new state. It takes a fresh letter as its
  // name when one is left; a 52-state input uses every letter, and the new
  // state then stays unnamed since nothing downstream needs to encode it.
  std::vector<int> unused;
  for (int l = 0; l < tok::kLetters; ++l) {
    if (state_of[static_cast<std::size_t>(l)] < 0) unused.push_back(l);
  }
  Fsa merged = m;
  const std::string fresh_name =
      unused.empty() ? "<ns>" : std::string(1, letter_char(unused[static_cast<std::size_t>(rng.below(unused.size()))]));
  const int fresh = merged.add_state(fresh_name, false);
  auto state = [&](std::size_t j) {
    const int t = gen[j];
    if (t == tok::kNewState) return fresh;
    if (!is_letter(t) || state_of[static_cast<std::size_t>(t)] < 0) {
      malformed("continuation token " + std::to_string(j) + " is not a known state");
    }
    return state_of[static_cast<std::size_t>(t)];
  };
  for (std::size_t i = 0; i < gen.size(); i += 4) {
    if (gen[i] != tok::kHash) malformed("expected '#' at continuation token " + std::to_string(i));
    if (gen[i + 2] != tok::kOpen && gen[i + 2] != tok::kClose) malformed("expected a bracket at continuation token " + std::to_string(i + 2));
    const int src = state(i + 1);
    const int dst = state(i + 3);
    if (i == 0 && src != deepest) {
      const std::string got = gen[i + 1] == tok::kNewState ? "<ns>" : token_text(gen[i + 1]);
      throw Error(ErrorCode::kStaleState, "continuation extends '" + got + "', deepest state is '" +
                                              token_text(naming.letter[static_cast<std::size_t>(deepest)]) + "'");
    }
    const Symbol sym = gen[i + 2] == tok::kOpen ? Symbol::kOpen : Symbol::kClose;
    const int old = merged.edge(src, sym);
    if (old != kNoEdge && old != dst) malformed("continuation redefines an existing transition");
    merged.set_edge(src, sym, dst);
  }
  return minimize(merged);
}

std::vector<Fsa> apply_ind_iter(const RnnParams& lm, const Fsa& fsa, int times, Rng& rng, bool shuffle) {
  if (times < 1) throw Error(ErrorCode::kInvalidArgument, "times must be >= 1");
  std::vector<Fsa> out;
  Fsa cur = fsa;
  for (int i = 1; i <= times; ++i) {
    try {
      cur = apply_ind(lm, cur, rng, shuffle);
    } catch (const Error& e) {
      throw Error(e.code(), "iteration " + std::to_string(i) + ": " + e.detail());
    }
    out.push_back(cur);
  }
  return out;
}

void write_instances(const std::vector<TrainingInstance>& instances, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp);
    for (const auto& inst : instances) out << inst.text() << "\n";
    if (!out) throw Error(ErrorCode::kIo, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::vector<TrainingInstance> read_instances(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<TrainingInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(instance_from_tokens(tokens_from_text(line)));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(lineno) + ": " + e.detail());
    }
  }
  return out;
}

}  // namespace dyind
