#pragma once

// Multi-behavior interaction data: TSV ingestion, duplicate removal,
// leave-one-out splitting, and a seeded synthetic generator for
// desk-scale experiments.
//
// Input format, one file per behavior:
//   user_id<TAB>item_id[<TAB>timestamp]
// Raw ids are arbitrary strings and get remapped to dense indices.
// Rows without a timestamp are ordered by file position instead.

#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mbrec/core.hpp"

namespace mbrec {

struct Interaction {
  Index user = 0;
  Index item = 0;
  std::optional<std::int64_t> ts;

  bool operator==(const Interaction&) const = default;
};

// One behavior's interactions, insertion-ordered. Presence means y=1;
// duplicates may exist until dedup_earliest has run.
struct InteractionSet {
  Index behavior = 0;
  std::vector<Interaction> entries;

  std::size_t size() const { return entries.size(); }
  bool operator==(const InteractionSet&) const = default;
};

// Effective ordering key: the timestamp when present, the insertion
// position otherwise. Ties are broken by insertion position later.
inline std::int64_t effective_ts(const Interaction& x, std::size_t pos) {
  return x.ts ? *x.ts : static_cast<std::int64_t>(pos);
}

inline std::uint64_t pack_pair(Index user, Index item) {
  return (static_cast<std::uint64_t>(user) << 32) | static_cast<std::uint32_t>(item);
}

// Bidirectional raw-id <-> dense-index table. Dense indices are handed
// out in interning order.
class IdMap {
 public:
  Index intern(const std::string& raw) {
    auto it = to_dense_.find(raw);
    if (it != to_dense_.end()) return it->second;
    const Index idx = static_cast<Index>(to_raw_.size());
    to_dense_.emplace(raw, idx);
    to_raw_.push_back(raw);
    return idx;
  }

  std::optional<Index> find(const std::string& raw) const {
    auto it = to_dense_.find(raw);
    if (it == to_dense_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& raw(Index idx) const { return to_raw_.at(static_cast<std::size_t>(idx)); }
  Index size() const { return static_cast<Index>(to_raw_.size()); }

  // Two-column TSV: raw_id<TAB>dense_index, dense ascending.
  void save_tsv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write id map: " + path);
    for (std::size_t i = 0; i < to_raw_.size(); ++i)
      out << to_raw_[i] << '\t' << i << '\n';
  }

  static IdMap load_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open id map: " + path);
    IdMap m;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError("expected 2 tab-separated fields", line_no);
      const Index idx = m.intern(line.substr(0, tab));
      if (std::to_string(idx) != line.substr(tab + 1))
        throw ParseError("dense index out of order", line_no);
    }
    return m;
  }

  bool operator==(const IdMap& o) const { return to_raw_ == o.to_raw_; }

 private:
  std::unordered_map<std::string, Index> to_dense_;
  std::vector<std::string> to_raw_;
};

// Full multi-behavior dataset. The chain is ordered; the last behavior
// is the prediction target.
struct MultiBehaviorDataset {
  Index num_users = 0;
  Index num_items = 0;
  std::vector<std::string> chain;
  std::vector<InteractionSet> sets;
  IdMap user_ids;
  IdMap item_ids;

  Index num_behaviors() const { return static_cast<Index>(chain.size()); }
  const InteractionSet& target() const { return sets.back(); }

  void validate() const {
    if (chain.empty()) throw ContractError("behavior chain is empty");
    if (sets.size() != chain.size())
      throw ContractError("behavior chain and interaction sets disagree in length");
    for (const auto& s : sets)
      for (const auto& e : s.entries)
        if (e.user < 0 || e.user >= num_users || e.item < 0 || e.item >= num_items)
          throw ContractError("interaction index out of bounds");
  }

  bool operator==(const MultiBehaviorDataset& o) const {
    return num_users == o.num_users && num_items == o.num_items && chain == o.chain &&
           sets == o.sets && user_ids == o.user_ids && item_ids == o.item_ids;
  }
};

// Leave-one-out split. Per user the chronologically last target
// interaction is the test item and the second last the validation
// item; auxiliary behaviors stay whole inside train.
struct SplitDataset {
  MultiBehaviorDataset train;
  std::map<Index, Index> validation;  // user -> held-out item
  std::map<Index, Index> test;
};

// Parses one behavior file. Unknown raw ids grow the id maps; line
// order is kept as insertion order.
inline InteractionSet parse_interactions(std::istream& in, Index behavior, IdMap& users,
                                         IdMap& items) {
  InteractionSet set;
  set.behavior = behavior;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() != 2 && fields.size() != 3)
      throw ParseError("expected 2 or 3 tab-separated fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    if (fields[0].empty()) throw ParseError("field \"user_id\" is empty", line_no);
    if (fields[1].empty()) throw ParseError("field \"item_id\" is empty", line_no);
    Interaction x;
    x.user = users.intern(fields[0]);
    x.item = items.intern(fields[1]);
    if (fields.size() == 3) {
      const std::string& t = fields[2];
      std::size_t used = 0;
      std::int64_t val = 0;
      try {
        val = std::stoll(t, &used);
      } catch (const std::exception&) {
        throw ParseError("field \"timestamp\" is not an integer: \"" + t + "\"", line_no);
      }
      if (used != t.size())
        throw ParseError("field \"timestamp\" is not an integer: \"" + t + "\"", line_no);
      x.ts = val;
    }
    set.entries.push_back(x);
  }
  return set;
}

// Keeps, per (user, item) pair, the entry with the smallest effective
// timestamp. Output is ordered by each pair's first occurrence.
inline InteractionSet dedup_earliest(const InteractionSet& set) {
  struct Best {
    std::size_t out_pos;
    std::int64_t key;
    std::size_t ins_pos;
  };
  InteractionSet out;
  out.behavior = set.behavior;
  std::unordered_map<std::uint64_t, Best> best;
  best.reserve(set.entries.size());
  for (std::size_t pos = 0; pos < set.entries.size(); ++pos) {
    const Interaction& x = set.entries[pos];
    const std::uint64_t key = pack_pair(x.user, x.item);
    const std::int64_t ts = effective_ts(x, pos);
    auto it = best.find(key);
    if (it == best.end()) {
      best.emplace(key, Best{out.entries.size(), ts, pos});
      out.entries.push_back(x);
    } else if (ts < it->second.key || (ts == it->second.key && pos < it->second.ins_pos)) {
      it->second.key = ts;
      it->second.ins_pos = pos;
      out.entries[it->second.out_pos] = x;
    }
  }
  return out;
}

// Splits the target behavior leave-one-out. Users with one target
// interaction keep it in train; users with two get a test item but no
// validation item. Auxiliary sets are copied whole.
inline SplitDataset leave_one_out_split(const MultiBehaviorDataset& dataset) {
  dataset.validate();
  SplitDataset split;
  split.train = dataset;

  const InteractionSet& target = dataset.target();
  struct Entry {
    std::int64_t ts;
    std::size_t pos;
  };
  std::unordered_map<Index, std::vector<Entry>> by_user;
  for (std::size_t pos = 0; pos < target.entries.size(); ++pos) {
    const Interaction& x = target.entries[pos];
    by_user[x.user].push_back({effective_ts(x, pos), pos});
  }

  std::unordered_set<std::size_t> held_out;
  for (auto& [user, list] : by_user) {
    std::sort(list.begin(), list.end(), [](const Entry& a, const Entry& b) {
      if (a.ts != b.ts) return a.ts < b.ts;
      return a.pos < b.pos;
    });
    if (list.size() >= 2) {
      const std::size_t test_pos = list.back().pos;
      split.test[user] = target.entries[test_pos].item;
      held_out.insert(test_pos);
    }
    if (list.size() >= 3) {
      const std::size_t val_pos = list[list.size() - 2].pos;
      split.validation[user] = target.entries[val_pos].item;
      held_out.insert(val_pos);
    }
  }

  InteractionSet train_target;
  train_target.behavior = target.behavior;
  for (std::size_t pos = 0; pos < target.entries.size(); ++pos)
    if (!held_out.contains(pos)) train_target.entries.push_back(target.entries[pos]);
  split.train.sets.back() = std::move(train_target);
  return split;
}

// Synthetic data generator. Interactions come from a latent-factor
// process: per user, the top-k items by latent score form each
// behavior's set, with k descending along the chain. With `nested` the
// same score ordering serves every behavior, so later (sparser)
// behaviors are subsets of earlier ones.
struct SyntheticConfig {
  Index num_users = 500;
  Index num_items = 300;
  Index latent_dim = 8;
  std::vector<double> densities;  // per behavior, non-increasing; fraction of items per user
  std::vector<std::string> chain;  // optional names; defaults to b0..b{B-1}
  bool nested = true;
  double noise = 0.25;  // score noise scale; per-behavior draws when not nested
};

inline MultiBehaviorDataset generate_synthetic(const SyntheticConfig& config,
                                               std::uint64_t seed) {
  if (config.num_users <= 0 || config.num_items <= 0)
    throw ConfigError("synthetic: user and item counts must be positive");
  if (config.densities.empty()) throw ConfigError("synthetic: no densities given");
  for (std::size_t b = 1; b < config.densities.size(); ++b)
    if (config.densities[b] > config.densities[b - 1])
      throw ConfigError("synthetic: densities must be non-increasing along the chain");

  const Index B = static_cast<Index>(config.densities.size());
  std::vector<Index> per_user(B);
  for (Index b = 0; b < B; ++b) {
    const double density = config.densities[b];
    if (density <= 0.0) throw ConfigError("synthetic: density must be positive");
    const Index k = static_cast<Index>(std::llround(density * static_cast<double>(config.num_items)));
    if (k > config.num_items)
      throw ConfigError("synthetic: density " + std::to_string(density) +
                        " needs more items per user than exist");
    per_user[b] = std::max<Index>(k, 1);
  }

  MultiBehaviorDataset ds;
  ds.num_users = config.num_users;
  ds.num_items = config.num_items;
  if (!config.chain.empty()) {
    if (static_cast<Index>(config.chain.size()) != B)
      throw ConfigError("synthetic: chain length does not match densities");
    ds.chain = config.chain;
  } else {
    for (Index b = 0; b < B; ++b) ds.chain.push_back("b" + std::to_string(b));
  }
  for (Index u = 0; u < ds.num_users; ++u) ds.user_ids.intern("u" + std::to_string(u));
  for (Index i = 0; i < ds.num_items; ++i) ds.item_ids.intern("i" + std::to_string(i));

  Rng rng(seed);
  Mat user_latent(ds.num_users, config.latent_dim);
  Mat item_latent(ds.num_items, config.latent_dim);
  for (double& v : user_latent.data()) v = rng.gaussian();
  for (double& v : item_latent.data()) v = rng.gaussian();

  // Base affinity scores, with one shared noise draw per pair in nested
  // mode so a single ordering serves every behavior.
  Mat base(ds.num_users, ds.num_items);
  for (Index u = 0; u < ds.num_users; ++u)
    for (Index i = 0; i < ds.num_items; ++i)
      base(u, i) = dot(user_latent.row_span(u), item_latent.row_span(i));
  if (config.nested && config.noise > 0.0)
    for (double& v : base.data()) v += config.noise * rng.gaussian();

  ds.sets.resize(static_cast<std::size_t>(B));
  std::vector<std::vector<Index>> ranked(static_cast<std::size_t>(ds.num_users));
  for (Index b = 0; b < B; ++b) {
    InteractionSet& set = ds.sets[static_cast<std::size_t>(b)];
    set.behavior = b;
    Mat scores = base;
    if (!config.nested && config.noise > 0.0)
      for (double& v : scores.data()) v += config.noise * rng.gaussian();
    const bool reuse_ranking = config.nested && b > 0;
    for (Index u = 0; u < ds.num_users; ++u) {
      auto& order = ranked[static_cast<std::size_t>(u)];
      if (!reuse_ranking) {
        order.resize(static_cast<std::size_t>(ds.num_items));
        for (Index i = 0; i < ds.num_items; ++i) order[static_cast<std::size_t>(i)] = i;
        const double* row = scores.row(u);
        std::sort(order.begin(), order.end(), [row](Index a, Index c) {
          if (row[a] != row[c]) return row[a] > row[c];
          return a < c;
        });
      }
      std::vector<Index> chosen(order.begin(), order.begin() + per_user[b]);
      rng.shuffle(chosen);
      for (std::size_t pos = 0; pos < chosen.size(); ++pos)
        set.entries.push_back({u, chosen[pos], static_cast<std::int64_t>(pos + 1)});
    }
  }
  return ds;
}

// Reads and dedups one file per behavior; dense indices are shared
// across behaviors through common id maps.
inline MultiBehaviorDataset load_dataset(const std::vector<std::string>& behaviors,
                                         const std::vector<std::string>& paths) {
  if (behaviors.empty()) throw ConfigError("no behaviors given");
  if (behaviors.size() != paths.size())
    throw ConfigError("behavior list and input list differ in length");
  MultiBehaviorDataset ds;
  ds.chain = behaviors;
  for (std::size_t b = 0; b < paths.size(); ++b) {
    std::ifstream in(paths[b]);
    if (!in) throw IoError("cannot open input file: " + paths[b]);
    InteractionSet raw = parse_interactions(in, static_cast<Index>(b), ds.user_ids, ds.item_ids);
    ds.sets.push_back(dedup_earliest(raw));
  }
  ds.num_users = ds.user_ids.size();
  ds.num_items = ds.item_ids.size();
  ds.validate();
  return ds;
}

// Keeps only the named behaviors, in the given order. Counts and id
// maps carry over so splits stay comparable across chain variants.
inline MultiBehaviorDataset restrict_chain(const MultiBehaviorDataset& ds,
                                           const std::vector<std::string>& names) {
  if (names.empty()) throw ConfigError("empty behavior chain");
  MultiBehaviorDataset out;
  out.num_users = ds.num_users;
  out.num_items = ds.num_items;
  out.user_ids = ds.user_ids;
  out.item_ids = ds.item_ids;
  out.chain = names;
  for (std::size_t b = 0; b < names.size(); ++b) {
    auto it = std::find(ds.chain.begin(), ds.chain.end(), names[b]);
    if (it == ds.chain.end()) throw ConfigError("unknown behavior: " + names[b]);
    InteractionSet set = ds.sets[static_cast<std::size_t>(it - ds.chain.begin())];
    set.behavior = static_cast<Index>(b);
    out.sets.push_back(std::move(set));
  }
  return out;
}

}  // namespace mbrec
