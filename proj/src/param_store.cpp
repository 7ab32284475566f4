#include "cpnkit/param_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cpnkit {

namespace {

constexpr char kMagic[] = "CPNKIT1";
constexpr std::size_t kMagicLength = 7;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint: truncated record");
  return v;
}

}  // namespace

template <typename Scalar>
Grid<Scalar>& ParamStore<Scalar>::add(const std::string& name, Shape shape, bool trainable) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  Entry e;
  e.name = name;
  e.value = Grid<Scalar>(std::move(shape));
  e.trainable = trainable;
  if (trainable) {
    e.first_moment = Array::Zero(e.value.size());
    e.second_moment = Array::Zero(e.value.size());
  }
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

template <typename Scalar>
Grid<Scalar>& ParamStore<Scalar>::at(const std::string& name) {
  return entry(name).value;
}

template <typename Scalar>
const Grid<Scalar>& ParamStore<Scalar>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename Scalar>
typename ParamStore<Scalar>::Entry& ParamStore<Scalar>::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
  return entries_[it->second];
}

template <typename Scalar>
Index ParamStore<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.value.size();
  }
  return n;
}

template <typename Scalar>
void ParamStore<Scalar>::zero_grad() {
  for (auto& e : entries_) {
    if (e.trainable) e.value.grad().setZero();
  }
}

template <typename Scalar>
void ParamStore<Scalar>::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, kMagicLength);
  for (const auto& e : entries_) {
    write_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_u32(os, static_cast<std::uint32_t>(e.value.rank()));
    for (Index extent : e.value.shape()) write_u32(os, static_cast<std::uint32_t>(extent));
    const Eigen::ArrayXf values = e.value.data().template cast<float>();
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

template <typename Scalar>
void ParamStore<Scalar>::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[kMagicLength];
  if (!is.read(magic, kMagicLength) || std::memcmp(magic, kMagic, kMagicLength) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  std::size_t seen = 0;
  while (is.peek() != std::char_traits<char>::eof()) {
    const std::uint32_t name_length = read_u32(is);
    std::string name(name_length, '\0');
    if (!is.read(name.data(), name_length)) throw std::runtime_error("checkpoint: truncated name");
    const std::uint32_t rank = read_u32(is);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(read_u32(is));
    auto& grid = at(name);
    if (grid.shape() != shape) {
      throw std::runtime_error("checkpoint: '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                               shape_string(grid.shape()));
    }
    Eigen::ArrayXf values(grid.size());
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)))) {
      throw std::runtime_error("checkpoint: truncated values for '" + name + "'");
    }
    grid.data() = values.cast<Scalar>();
    ++seen;
  }
  if (seen != entries_.size()) {
    throw std::runtime_error("checkpoint: " + path.string() + " holds " + std::to_string(seen) + " of " +
                             std::to_string(entries_.size()) + " entries");
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace cpnkit
