#pragma once

// Flat f64 parameter vector with an ordered, named slice layout.

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hyperkkl/error.hpp"
#include "hyperkkl/rng.hpp"

namespace hyperkkl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Slice {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
  friend bool operator==(const Slice&, const Slice&) = default;
};

class ParamStore {
 public:
  ParamStore() = default;

  /// Appends a zero-filled rows x cols slice (row-major).
  const Slice& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    require(rows > 0 && cols > 0, "slice '" + name + "' must have positive shape");
    require(!index_.contains(name), "duplicate slice '" + name + "'");
    Slice s{name, rows, cols, data_.size()};
    data_.resize(data_.size() + s.size(), 0.0);
    index_.emplace(name, layout_.size());
    layout_.push_back(s);
    return layout_.back();
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  const Slice& slice(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractViolation("no slice named '" + name + "'");
    return layout_[it->second];
  }

  Eigen::Map<RowMat> view(const std::string& name) {
    const Slice& s = slice(name);
    return {data_.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<const RowMat> view(const std::string& name) const {
    const Slice& s = slice(name);
    return {data_.data() + s.offset, s.rows, s.cols};
  }

  std::span<double> span(const Slice& s) { return {data_.data() + s.offset, s.size()}; }
  std::span<const double> span(const Slice& s) const { return {data_.data() + s.offset, s.size()}; }

  Eigen::Map<Eigen::VectorXd> flat() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  Eigen::Map<const Eigen::VectorXd> flat() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  const std::vector<Slice>& layout() const { return layout_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool same_layout(const ParamStore& o) const { return layout_ == o.layout_; }

  /// Zero-valued store with this layout.
  ParamStore zeros_like() const {
    ParamStore z = *this;
    std::fill(z.data_.begin(), z.data_.end(), 0.0);
    return z;
  }

  ParamStore& operator+=(const ParamStore& o) {
    check_layout(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  ParamStore& operator-=(const ParamStore& o) {
    check_layout(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  ParamStore& operator*=(double c) {
    for (double& v : data_) v *= c;
    return *this;
  }
  friend ParamStore operator+(ParamStore a, const ParamStore& b) { return a += b; }
  friend ParamStore operator-(ParamStore a, const ParamStore& b) { return a -= b; }

  /// Copies every slice of `src` into this store's slice of the same name.
  void assign_from(const ParamStore& src) {
    for (const auto& s : src.layout()) {
      const Slice& d = slice(s.name);
      require(d.rows == s.rows && d.cols == s.cols, "shape mismatch for slice '" + s.name + "'");
      std::copy_n(src.data_.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(),
                  data_.begin() + static_cast<std::ptrdiff_t>(d.offset));
    }
  }

  /// Uniform(-bound, bound) fill of one slice from a counter stream.
  void fill_uniform(const std::string& name, double bound, CounterRng& rng) {
    for (double& v : span(slice(name))) v = rng.uniform(-bound, bound);
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.layout_ == b.layout_ && a.data_ == b.data_;
  }

 private:
  void check_layout(const ParamStore& o) const {
    if (!same_layout(o)) throw ContractViolation("parameter layouts differ");
  }

  std::vector<Slice> layout_;
  std::vector<double> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace hyperkkl
