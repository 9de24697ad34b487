#include "lsp/tensor.hpp"

#include <algorithm>

namespace lsp {

template <typename S>
void ParameterSet<S>::add(std::string name, Tensor<S> value) {
  if (contains(name)) throw Error(ErrorKind::kConfig, "duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), value.detach());
}

template <typename S>
bool ParameterSet<S>::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

template <typename S>
const Tensor<S>& ParameterSet<S>::get(const std::string& name) const {
  for (const auto& [key, value] : entries_) {
    if (key == name) return value;
  }
  throw Error(ErrorKind::kShapeMismatch, "missing parameter '" + name + "'");
}

template <typename S>
void ParameterSet<S>::set(const std::string& name, Tensor<S> value) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first == name) return set_at(i, std::move(value));
  }
  throw Error(ErrorKind::kShapeMismatch, "missing parameter '" + name + "'");
}

template <typename S>
void ParameterSet<S>::set_at(std::size_t i, Tensor<S> value) {
  if (value.shape() != entries_.at(i).second.shape()) {
    throw Error(ErrorKind::kShapeMismatch, "parameter '" + entries_[i].first + "' is " +
                                               shape_string(entries_[i].second.shape()) + ", got " +
                                               shape_string(value.shape()));
  }
  entries_[i].second = value.detach();
}

template <typename S>
Index ParameterSet<S>::parameter_count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

template <typename S>
ParameterSet<S> ParameterSet<S>::watch(Tape<S>& tape) const {
  ParameterSet out;
  for (const auto& [name, value] : entries_) out.entries_.emplace_back(name, tape.watch(value));
  return out;
}

template <typename S>
bool ParameterSet<S>::operator==(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.first != b.first || a.second.shape() != b.second.shape()) return false;
    if (!std::equal(a.second.values().begin(), a.second.values().end(), b.second.values().begin())) return false;
  }
  return true;
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace lsp
