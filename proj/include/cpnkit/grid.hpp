#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpnkit {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);
Index shape_size(const Shape& shape);

/// Dense row-major array with shape metadata and an optional gradient slot.
///
/// Image-like grids are C x H x W or N x C x H x W; the NCHW accessors treat a
/// rank-3 grid as a batch of one. Parameters (kernels, biases) use the same
/// type with whatever rank they need.
template <typename Scalar>
class Grid {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Grid() = default;
  explicit Grid(Shape shape);
  Grid(Shape shape, Array data);
  Grid(std::initializer_list<Index> shape) : Grid(Shape(shape)) {}

  static Grid constant(Shape shape, Scalar value);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Index batch() const { return rank() == 4 ? shape_[0] : 1; }
  Index channels() const { return shape_[shape_.size() - 3]; }
  Index height() const { return shape_[shape_.size() - 2]; }
  Index width() const { return shape_[shape_.size() - 1]; }

  Array& data() { return data_; }
  const Array& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  // NCHW element access; n is ignored bounds-wise for rank-3 grids.
  Scalar& at(Index n, Index c, Index y, Index x) {
    return data_[((n * channels() + c) * height() + y) * width() + x];
  }
  Scalar at(Index n, Index c, Index y, Index x) const {
    return data_[((n * channels() + c) * height() + y) * width() + x];
  }

  bool has_grad() const { return grad_.has_value(); }
  /// Gradient slot, zero-initialised on first access.
  Array& grad();
  const Array& grad() const;
  void set_grad(Array g);
  void zero_grad();
  void drop_grad() { grad_.reset(); }

  /// Reinterpret with a new shape of identical total size.
  Grid reshaped(Shape shape) const;

  template <typename Other>
  Grid<Other> cast() const {
    Grid<Other> out(shape_, data_.template cast<Other>());
    if (grad_) out.set_grad(grad_->template cast<Other>());
    return out;
  }

 private:
  Shape shape_;
  Array data_;
  std::optional<Array> grad_;
};

template <typename Scalar>
Grid<Scalar>::Grid(Shape shape) : shape_(std::move(shape)) {
  data_ = Array::Zero(shape_size(shape_));
}

template <typename Scalar>
Grid<Scalar>::Grid(Shape shape, Array data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw std::invalid_argument("Grid: shape " + shape_string(shape_) + " does not match data length " +
                                std::to_string(data_.size()));
  }
}

template <typename Scalar>
Grid<Scalar> Grid<Scalar>::constant(Shape shape, Scalar value) {
  Grid g(std::move(shape));
  g.data_.setConstant(value);
  return g;
}

template <typename Scalar>
typename Grid<Scalar>::Array& Grid<Scalar>::grad() {
  if (!grad_) grad_ = Array::Zero(data_.size());
  return *grad_;
}

template <typename Scalar>
const typename Grid<Scalar>::Array& Grid<Scalar>::grad() const {
  if (!grad_) throw std::logic_error("Grid: gradient requested on grid " + shape_string(shape_) + " without one");
  return *grad_;
}

template <typename Scalar>
void Grid<Scalar>::set_grad(Array g) {
  if (g.size() != data_.size()) {
    throw std::invalid_argument("Grid: gradient length " + std::to_string(g.size()) + " does not match shape " +
                                shape_string(shape_));
  }
  grad_ = std::move(g);
}

template <typename Scalar>
void Grid<Scalar>::zero_grad() {
  if (grad_) grad_->setZero();
}

template <typename Scalar>
Grid<Scalar> Grid<Scalar>::reshaped(Shape shape) const {
  return Grid(std::move(shape), data_);
}

/// The n-th item of an N x C x H x W grid as C x H x W.
template <typename Scalar>
Grid<Scalar> batch_item(const Grid<Scalar>& grid, Index n) {
  if (grid.rank() == 3 && n == 0) return Grid<Scalar>(grid.shape(), grid.data());
  if (grid.rank() != 4 || n < 0 || n >= grid.batch()) {
    throw std::out_of_range("batch_item: item " + std::to_string(n) + " of " + shape_string(grid.shape()));
  }
  const Index len = grid.size() / grid.batch();
  return Grid<Scalar>({grid.shape()[1], grid.shape()[2], grid.shape()[3]}, grid.data().segment(n * len, len));
}

/// Stacks equally shaped C x H x W grids into N x C x H x W.
template <typename Scalar>
Grid<Scalar> stack_batch(const std::vector<Grid<Scalar>>& items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: no items");
  const Shape& item_shape = items.front().shape();
  if (item_shape.size() != 3) throw std::invalid_argument("stack_batch: items must be C x H x W");
  Shape shape{static_cast<Index>(items.size())};
  shape.insert(shape.end(), item_shape.begin(), item_shape.end());
  Grid<Scalar> out(shape);
  const Index len = shape_size(item_shape);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != item_shape) {
      throw std::invalid_argument("stack_batch: shape mismatch " + shape_string(item_shape) + " vs " +
                                  shape_string(items[i].shape()));
    }
    out.data().segment(static_cast<Index>(i) * len, len) = items[i].data();
  }
  return out;
}

extern template class Grid<float>;
extern template class Grid<double>;

}  // namespace cpnkit
