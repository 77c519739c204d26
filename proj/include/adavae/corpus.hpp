// Dataset loading, whitespace tokenization, and deterministic batching.
//
// Dataset files hold one record per line, either "label<TAB>text" or bare
// "text". Labels, when present, must appear on every line and form a
// contiguous 0-based set. Vocabulary ids 0..3 are reserved for PAD, BOS,
// EOS, UNK; the rest are assigned by descending frequency with lexicographic
// tie-breaking, so the table is a pure function of the corpus bytes.
#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "adavae/common.hpp"
#include "adavae/rng.hpp"

namespace adavae {

struct Record {
  std::string text;
  int label = -1;  // -1 = unlabeled
};

struct Corpus {
  std::vector<Record> records;

  bool labeled() const {
    return !records.empty() && records.front().label >= 0;
  }

  int n_labels() const {
    int mx = -1;
    for (const Record& r : records) mx = std::max(mx, r.label);
    return mx + 1;
  }
};

inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline Corpus parse_corpus(std::istream& in, const std::string& origin) {
  Corpus corpus;
  std::string line;
  long line_no = 0;
  bool any_labeled = false, any_unlabeled = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Record rec;
    const auto tab = line.find('\t');
    if (tab != std::string::npos) {
      const std::string head = line.substr(0, tab);
      try {
        std::size_t used = 0;
        const int label = std::stoi(head, &used);
        if (used == head.size() && label >= 0) {
          rec.label = label;
          rec.text = line.substr(tab + 1);
        } else {
          rec.text = line;
        }
      } catch (const std::exception&) {
        rec.text = line;
      }
    } else {
      rec.text = line;
    }
    if (tokenize(rec.text).empty())
      throw DataError(origin + ":" + std::to_string(line_no) +
                      ": empty text");
    (rec.label >= 0 ? any_labeled : any_unlabeled) = true;
    corpus.records.push_back(std::move(rec));
  }
  if (corpus.records.empty()) throw DataError(origin + ": empty corpus");
  if (any_labeled && any_unlabeled)
    throw DataError(origin + ": mixed labeled and unlabeled lines");
  if (any_labeled) {
    std::set<int> seen;
    for (const Record& r : corpus.records) seen.insert(r.label);
    int expect = 0;
    for (int l : seen)
      if (l != expect++)
        throw DataError(origin + ": labels are not a contiguous 0-based set");
  }
  return corpus;
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path);
  return parse_corpus(in, path);
}

// --------------------------------------------------------------------------
// vocabulary

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::vector<std::string> tokens;  // index == id, reserved ids included
  std::unordered_map<std::string, int> ids;

  int size() const { return static_cast<int>(tokens.size()); }

  int id_of(const std::string& tok) const {
    auto it = ids.find(tok);
    return it == ids.end() ? kUnk : it->second;
  }

  // BOS + tokens + EOS, truncated to max_len (EOS always kept).
  std::vector<int> encode(const std::string& text, int max_len) const {
    std::vector<int> out;
    out.push_back(kBos);
    for (const std::string& tok : tokenize(text)) {
      if (static_cast<int>(out.size()) >= max_len - 1) break;
      out.push_back(id_of(tok));
    }
    out.push_back(kEos);
    return out;
  }

  std::string decode(const std::vector<int>& in) const {
    std::string out;
    for (int id : in) {
      if (id == kPad || id == kBos || id == kEos) continue;
      if (id < 0 || id >= size())
        throw IndexError("decode: id " + std::to_string(id) +
                         " outside vocab of size " + std::to_string(size()));
      if (!out.empty()) out.push_back(' ');
      out += tokens[static_cast<std::size_t>(id)];
    }
    return out;
  }
};

// Most frequent max_size corpus tokens (ties broken lexicographically) on
// top of the four reserved ids.
inline Vocab build_vocab(const Corpus& corpus, int max_size) {
  if (corpus.records.empty()) throw ContractError("build_vocab: empty corpus");
  std::unordered_map<std::string, long> freq;
  for (const Record& r : corpus.records)
    for (const std::string& tok : tokenize(r.text)) ++freq[tok];
  std::vector<std::pair<std::string, long>> entries(freq.begin(), freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(entries.size()) > max_size) entries.resize(
      static_cast<std::size_t>(max_size));
  Vocab v;
  v.tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (const auto& [tok, n] : entries) v.tokens.push_back(tok);
  for (int i = 0; i < v.size(); ++i) v.ids[v.tokens[static_cast<std::size_t>(i)]] = i;
  return v;
}

// --------------------------------------------------------------------------
// batching

struct Batch {
  std::vector<std::vector<int>> rows;  // right-padded to a common length
  std::vector<int> n_real;             // non-pad length per row
  std::vector<int> labels;             // -1 when unlabeled
  std::vector<std::size_t> source;     // record indices
};

inline long batches_per_epoch(std::size_t n, long batch_size) {
  return static_cast<long>((n + static_cast<std::size_t>(batch_size) - 1) /
                           static_cast<std::size_t>(batch_size));
}

// The batch consumed at step t: a pure function of (encoded corpus, labels,
// batch size, seed, t). Each epoch reshuffles with a sub-stream keyed by the
// epoch index, so resuming mid-epoch reproduces the exact same batches.
inline Batch batch_at_step(const std::vector<std::vector<int>>& encoded,
                           const std::vector<int>& labels, long step,
                           long batch_size, std::uint64_t seed) {
  if (encoded.empty()) throw ContractError("batch_at_step: empty corpus");
  const long bpe = batches_per_epoch(encoded.size(), batch_size);
  const long epoch = step / bpe;
  const long slot = step % bpe;
  std::vector<std::size_t> perm(encoded.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(substream(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
  rng.shuffle(perm);
  const std::size_t begin = static_cast<std::size_t>(slot * batch_size);
  const std::size_t end =
      std::min(encoded.size(), begin + static_cast<std::size_t>(batch_size));
  Batch b;
  std::size_t max_len = 0;
  for (std::size_t i = begin; i < end; ++i)
    max_len = std::max(max_len, encoded[perm[i]].size());
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t src = perm[i];
    std::vector<int> row = encoded[src];
    b.n_real.push_back(static_cast<int>(row.size()));
    row.resize(max_len, Vocab::kPad);
    b.rows.push_back(std::move(row));
    b.labels.push_back(labels.empty() ? -1 : labels[src]);
    b.source.push_back(src);
  }
  return b;
}

}  // namespace adavae
