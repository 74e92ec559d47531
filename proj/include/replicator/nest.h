// Copyright 2026 The Replicator Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef REPLICATOR_NEST_H_
#define REPLICATOR_NEST_H_

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "replicator/errors.h"

namespace replicator {

// A nested structure of leaves: a leaf, an ordered list, or an ordered
// string-keyed dict. Flattening visits leaves depth-first in order.
template <typename T>
class Nest {
 public:
  using List = std::vector<Nest>;
  using Dict = std::vector<std::pair<std::string, Nest>>;

  Nest() : value_(List{}) {}
  Nest(T leaf) : value_(std::move(leaf)) {}  // NOLINT(runtime/explicit)
  Nest(List items) : value_(std::move(items)) {}  // NOLINT(runtime/explicit)
  Nest(Dict items) : value_(std::move(items)) {}  // NOLINT(runtime/explicit)

  bool is_leaf() const { return value_.index() == 0; }
  bool is_list() const { return value_.index() == 1; }
  bool is_dict() const { return value_.index() == 2; }

  const T& leaf() const {
    if (!is_leaf()) throw ConstructionError("nest: not a leaf");
    return std::get<0>(value_);
  }
  const List& list() const {
    if (!is_list()) throw ConstructionError("nest: not a list");
    return std::get<1>(value_);
  }
  const Dict& dict() const {
    if (!is_dict()) throw ConstructionError("nest: not a dict");
    return std::get<2>(value_);
  }

  const Nest& operator[](size_t i) const { return list().at(i); }
  const Nest& at(const std::string& key) const {
    for (const auto& [k, v] : dict()) {
      if (k == key) return v;
    }
    throw ConstructionError("nest: no key '" + key + "'");
  }

  std::vector<T> Flatten() const {
    std::vector<T> out;
    FlattenInto(out);
    return out;
  }

  size_t num_leaves() const {
    if (is_leaf()) return 1;
    size_t n = 0;
    if (is_list()) {
      for (const auto& x : list()) n += x.num_leaves();
    } else {
      for (const auto& [k, x] : dict()) n += x.num_leaves();
    }
    return n;
  }

  template <typename Fn>
  auto Map(Fn&& fn) const -> Nest<decltype(fn(std::declval<const T&>()))> {
    using U = decltype(fn(std::declval<const T&>()));
    if (is_leaf()) return Nest<U>(fn(leaf()));
    if (is_list()) {
      typename Nest<U>::List out;
      for (const auto& x : list()) out.push_back(x.Map(fn));
      return Nest<U>(std::move(out));
    }
    typename Nest<U>::Dict out;
    for (const auto& [k, x] : dict()) out.emplace_back(k, x.Map(fn));
    return Nest<U>(std::move(out));
  }

  // Rebuilds this structure with `leaves` (flatten order).
  template <typename U>
  Nest<U> Pack(const std::vector<U>& leaves) const {
    if (leaves.size() != num_leaves()) {
      throw ConstructionError("nest: expected " + std::to_string(num_leaves()) + " leaves, got " +
                              std::to_string(leaves.size()));
    }
    size_t pos = 0;
    return PackFrom(leaves, pos);
  }

  template <typename U>
  bool SameStructure(const Nest<U>& other) const {
    if (is_leaf()) return other.is_leaf();
    if (is_list()) {
      if (!other.is_list() || other.list().size() != list().size()) return false;
      for (size_t i = 0; i < list().size(); ++i) {
        if (!list()[i].SameStructure(other.list()[i])) return false;
      }
      return true;
    }
    if (!other.is_dict() || other.dict().size() != dict().size()) return false;
    for (size_t i = 0; i < dict().size(); ++i) {
      if (dict()[i].first != other.dict()[i].first) return false;
      if (!dict()[i].second.SameStructure(other.dict()[i].second)) return false;
    }
    return true;
  }

 private:
  template <typename>
  friend class Nest;

  void FlattenInto(std::vector<T>& out) const {
    if (is_leaf()) {
      out.push_back(leaf());
    } else if (is_list()) {
      for (const auto& x : list()) x.FlattenInto(out);
    } else {
      for (const auto& [k, x] : dict()) x.FlattenInto(out);
    }
  }

  template <typename U>
  Nest<U> PackFrom(const std::vector<U>& leaves, size_t& pos) const {
    if (is_leaf()) return Nest<U>(leaves[pos++]);
    if (is_list()) {
      typename Nest<U>::List out;
      for (const auto& x : list()) out.push_back(x.PackFrom(leaves, pos));
      return Nest<U>(std::move(out));
    }
    typename Nest<U>::Dict out;
    for (const auto& [k, x] : dict()) out.emplace_back(k, x.PackFrom(leaves, pos));
    return Nest<U>(std::move(out));
  }

  std::variant<T, List, Dict> value_;
};

}  // namespace replicator

#endif  // REPLICATOR_NEST_H_
