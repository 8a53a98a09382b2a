#include "agcrf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace agcrf {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 4)
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape_.size()));
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty() || shape_.size() > 4)
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape_.size()));
  if (shape_numel(shape_) != data_.size())
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
}

int Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) throw ShapeError("dimension index out of range for " + shape_str(shape_));
  return shape_[i];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::channel_slice(int begin, int count) const {
  require_image(*this, "channel_slice");
  if (begin < 0 || count <= 0 || begin + count > channels())
    throw ShapeError("channel slice out of range");
  const std::size_t plane = static_cast<std::size_t>(height()) * width();
  Tensor out({count, height(), width()});
  std::copy_n(data_.begin() + begin * plane, count * plane, out.data_.begin());
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

Tensor& Tensor::operator+=(const Tensor& o) {
  require_same_shape(*this, o, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
  require_same_shape(*this, o, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_image(const Tensor& t, const char* what) {
  if (t.rank() != 3)
    throw ShapeError(std::string(what) + ": expected a C x H x W tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  int channels = 0;
  for (const Tensor& p : parts) {
    require_image(p, "concat_channels");
    if (p.height() != parts[0].height() || p.width() != parts[0].width())
      throw ShapeError("concat_channels: spatial size mismatch");
    channels += p.channels();
  }
  Tensor out({channels, parts[0].height(), parts[0].width()});
  auto it = out.raw().begin();
  for (const Tensor& p : parts) it = std::copy(p.raw().begin(), p.raw().end(), it);
  return out;
}

Tensor mirror_x(const Tensor& t) {
  const int w = t.shape().back();
  Tensor out = t;
  const std::size_t rows = t.size() / w;
  for (std::size_t r = 0; r < rows; ++r)
    for (int x = 0; x < w; ++x) out[r * w + x] = t[r * w + (w - 1 - x)];
  return out;
}

}  // namespace agcrf
