#pragma once

#include "cpnkit/grid.hpp"

#include <deque>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace cpnkit {

/// Named parameters and buffers with Adam moment slots.
///
/// Entries keep registration order, which is also the checkpoint order.
/// Buffers (batchnorm running statistics) are stored alongside parameters
/// but are not trainable and carry no optimizer state.
template <typename Scalar>
class ParamStore {
 public:
  using Array = typename Grid<Scalar>::Array;

  struct Entry {
    std::string name;
    Grid<Scalar> value;
    bool trainable = true;
    Array first_moment;
    Array second_moment;
  };

  Grid<Scalar>& add(const std::string& name, Shape shape, bool trainable = true);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Grid<Scalar>& at(const std::string& name);
  const Grid<Scalar>& at(const std::string& name) const;
  Entry& entry(const std::string& name);

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }

  /// Number of trainable scalars.
  Index parameter_count() const;

  void zero_grad();

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& e : entries_) {
      out.add(e.name, e.value.shape(), e.trainable).data() = e.value.data().template cast<Other>();
    }
    return out;
  }

  /// Binary checkpoint: "CPNKIT1" then per entry
  /// u32 name length, name bytes, u32 rank, u32 extents, float32 values (LE).
  void save(const std::filesystem::path& path) const;
  /// Fills registered entries from a checkpoint; names and shapes must match exactly.
  void load(const std::filesystem::path& path);

 private:
  std::deque<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace cpnkit
