#include "soda/label_space.hpp"

#include <unordered_set>

#include "soda/error.hpp"

namespace soda {

const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw InvalidInput("unknown domain '" + s + "' (expected source or target)");
}

namespace {

void check_names(const std::vector<std::string>& names, const char* which) {
  if (names.empty()) throw InvalidInput(std::string(which) + " label list is empty");
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second)
      throw InvalidInput(std::string("duplicate label '") + n + "' in " + which + " label list");
  }
}

}  // namespace

LabelTopology build_topology(const std::vector<std::string>& source_names,
                             const std::vector<std::string>& target_names) {
  check_names(source_names, "source");
  check_names(target_names, "target");

  LabelTopology t;
  t.source_ = source_names;
  t.target_ = target_names;

  const std::unordered_set<std::string> src(source_names.begin(), source_names.end());
  const std::unordered_set<std::string> tgt(target_names.begin(), target_names.end());
  for (const auto& n : source_names) {
    (tgt.count(n) ? t.common_ : t.source_specific_).push_back(n);
  }
  for (const auto& n : target_names) {
    if (!src.count(n)) t.target_specific_.push_back(n);
  }

  t.unified_ = source_names;
  t.unified_.insert(t.unified_.end(), t.target_specific_.begin(), t.target_specific_.end());
  for (std::size_t i = 0; i < t.unified_.size(); ++i) {
    const auto& n = t.unified_[i];
    t.index_.emplace(n, i);
    t.source_mask_.push_back(src.count(n) > 0);
    t.target_mask_.push_back(tgt.count(n) > 0);
    t.common_mask_.push_back(src.count(n) > 0 && tgt.count(n) > 0);
  }
  return t;
}

std::optional<std::size_t> LabelTopology::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool LabelTopology::in_domain(std::size_t index, Domain d) const {
  return domain_mask(d).at(index);
}

LabelVector encode_labels(const std::vector<std::string>& names, Domain domain,
                          const LabelTopology& topology) {
  const std::size_t n = topology.size();
  LabelVector v{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  const auto& mask = topology.domain_mask(domain);
  for (std::size_t i = 0; i < n; ++i) v.mask[i] = mask[i] ? 1.0 : 0.0;
  for (const auto& name : names) {
    auto idx = topology.index_of(name);
    if (!idx) throw InvalidInput("unknown label '" + name + "'");
    if (!mask[*idx])
      throw InvalidInput("label '" + name + "' is not in the " + to_string(domain) +
                         " label set");
    v.values[*idx] = 1.0;
  }
  return v;
}

std::vector<std::string> decode_labels(const LabelVector& v, const LabelTopology& topology) {
  if (v.values.size() != topology.size()) throw InvalidInput("label vector length mismatch");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    if (v.values[i] != 0.0) out.push_back(topology.name_at(i));
  }
  return out;
}

bool has_common_label(const LabelVector& v, const LabelTopology& topology) {
  if (v.values.size() != topology.size())
    throw InvalidInput("label vector length " + std::to_string(v.values.size()) +
                       " does not match topology size " + std::to_string(topology.size()));
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    if (v.values[i] != 0.0 && topology.is_common(i)) return true;
  }
  return false;
}

}  // namespace soda
