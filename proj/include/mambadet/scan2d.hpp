// Orderings of a 2D patch grid as 1D token sequences.
//
// A ScanOrder lists flat raster indices in visitation order. Most strategies
// visit every cell (a bijection); the members of an atrous (efficient) scan
// each visit one residue class of the grid, and together partition it.
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mambadet::scan {

class ScanError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kUnvisited = static_cast<std::size_t>(-1);

class ScanOrder {
 public:
  ScanOrder(std::size_t h, std::size_t w, std::vector<std::size_t> order);

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t cells() const { return h_ * w_; }
  std::size_t size() const { return order_.size(); }
  const std::vector<std::size_t>& order() const { return order_; }
  // inverse()[cell] is the visitation rank of `cell`, or kUnvisited.
  const std::vector<std::size_t>& inverse() const { return inverse_; }

  bool covers_grid() const { return order_.size() == cells(); }
  // Order is a permutation of 0..h*w-1 and inverse(order) is the identity.
  bool is_bijection() const;

  ScanOrder reversed() const;

  friend bool operator==(const ScanOrder&, const ScanOrder&) = default;

 private:
  std::size_t h_;
  std::size_t w_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> inverse_;
};

enum class Merge { kSum, kMean };

struct MultiScan {
  std::vector<ScanOrder> directions;
  Merge merge = Merge::kSum;

  // How many members visit each cell; the divisor of the mean merge.
  std::vector<std::size_t> coverage() const;
  // Members concatenated into one order.
  std::vector<std::size_t> concatenated() const;
  void validate() const;
};

ScanOrder raster_scan(std::size_t h, std::size_t w);
ScanOrder zigzag_scan(std::size_t h, std::size_t w);
ScanOrder local_scan(std::size_t h, std::size_t w, std::size_t win);
MultiScan single(ScanOrder order);
MultiScan bidirectional(const ScanOrder& order);
MultiScan cross_scan(std::size_t h, std::size_t w);
MultiScan efficient_scan(std::size_t h, std::size_t w, std::size_t stride);

// Named strategies used by configs and the CLI: raster, bidirectional, cross,
// zigzag, local, efficient. `param` is the window (local) or stride (efficient).
MultiScan make_scan(const std::string& strategy, std::size_t h, std::size_t w,
                    std::size_t param = 2, Merge merge = Merge::kSum);
std::vector<std::string> strategy_names();

template <typename T>
std::vector<T> gather(std::span<const T> grid_tokens, const ScanOrder& order) {
  if (grid_tokens.size() != order.cells()) {
    throw ScanError("gather: " + std::to_string(grid_tokens.size()) +
                    " tokens for a grid of " + std::to_string(order.cells()));
  }
  std::vector<T> out;
  out.reserve(order.size());
  for (std::size_t cell : order.order()) out.push_back(grid_tokens[cell]);
  return out;
}

// Inverse of gather; cells the order does not visit receive `fill`.
template <typename T>
std::vector<T> scatter(std::span<const T> scan_tokens, const ScanOrder& order, T fill = T{}) {
  if (scan_tokens.size() != order.size()) {
    throw ScanError("scatter: " + std::to_string(scan_tokens.size()) +
                    " tokens for an order of length " + std::to_string(order.size()));
  }
  std::vector<T> out(order.cells(), fill);
  for (std::size_t k = 0; k < order.size(); ++k) out[order.order()[k]] = scan_tokens[k];
  return out;
}

// Visitation rank grid rendered as text, one row per line.
std::string render_ranks(const ScanOrder& order);

}  // namespace mambadet::scan
