#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace soda {

enum class Domain { source, target };

const char* to_string(Domain d);
Domain parse_domain(const std::string& s);

/// Source, target, common and domain-specific label sets plus the unified
/// index. Unified order is source labels as given, then target-specific
/// labels as given. Immutable after construction.
class LabelTopology {
 public:
  LabelTopology() = default;

  const std::vector<std::string>& source_labels() const { return source_; }
  const std::vector<std::string>& target_labels() const { return target_; }
  const std::vector<std::string>& common_labels() const { return common_; }
  const std::vector<std::string>& source_specific() const { return source_specific_; }
  const std::vector<std::string>& target_specific() const { return target_specific_; }
  const std::vector<std::string>& unified() const { return unified_; }

  std::size_t size() const { return unified_.size(); }
  std::optional<std::size_t> index_of(const std::string& name) const;
  const std::string& name_at(std::size_t index) const { return unified_.at(index); }

  bool is_common(std::size_t index) const { return common_mask_.at(index); }
  bool in_domain(std::size_t index, Domain d) const;
  const std::vector<bool>& domain_mask(Domain d) const {
    return d == Domain::source ? source_mask_ : target_mask_;
  }

  bool operator==(const LabelTopology& other) const {
    return source_ == other.source_ && target_ == other.target_;
  }

 private:
  friend LabelTopology build_topology(const std::vector<std::string>&,
                                      const std::vector<std::string>&);

  std::vector<std::string> source_;
  std::vector<std::string> target_;
  std::vector<std::string> common_;
  std::vector<std::string> source_specific_;
  std::vector<std::string> target_specific_;
  std::vector<std::string> unified_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<bool> common_mask_;
  std::vector<bool> source_mask_;
  std::vector<bool> target_mask_;
};

/// Throws InvalidInput on an empty list or a duplicate name within a list.
/// Names compare exactly (case-sensitive, no normalization).
LabelTopology build_topology(const std::vector<std::string>& source_names,
                             const std::vector<std::string>& target_names);

/// Multi-hot label vector over the unified index. mask[i] is 1 iff label i
/// belongs to the owning domain's label set, and values[i] = 1 implies
/// mask[i] = 1.
struct LabelVector {
  std::vector<double> values;
  std::vector<double> mask;

  bool operator==(const LabelVector&) const = default;
};

LabelVector encode_labels(const std::vector<std::string>& names, Domain domain,
                          const LabelTopology& topology);

/// Names of the asserted labels, in unified order.
std::vector<std::string> decode_labels(const LabelVector& v, const LabelTopology& topology);

bool has_common_label(const LabelVector& v, const LabelTopology& topology);

}  // namespace soda
