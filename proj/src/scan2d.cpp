#include "mambadet/scan2d.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace mambadet::scan {

namespace {

void require_extent(std::size_t h, std::size_t w, const char* what) {
  if (h == 0 || w == 0) {
    throw ScanError(std::string(what) + ": grid extents must be >= 1");
  }
}

void require_divides(std::size_t step, std::size_t h, std::size_t w, const char* what,
                     const char* param) {
  if (step == 0) throw ScanError(std::string(what) + ": " + param + " must be >= 1");
  if (h % step != 0 || w % step != 0) {
    throw ScanError(std::string(what) + ": " + param + " " + std::to_string(step) +
                    " does not divide the " + std::to_string(h) + "x" + std::to_string(w) +
                    " grid; choose a " + param + " that divides both extents");
  }
}

}  // namespace

ScanOrder::ScanOrder(std::size_t h, std::size_t w, std::vector<std::size_t> order)
    : h_(h), w_(w), order_(std::move(order)), inverse_(h * w, kUnvisited) {
  require_extent(h, w, "ScanOrder");
  for (std::size_t k = 0; k < order_.size(); ++k) {
    const std::size_t cell = order_[k];
    if (cell >= cells()) throw ScanError("ScanOrder: cell index out of range");
    if (inverse_[cell] != kUnvisited) throw ScanError("ScanOrder: cell visited twice");
    inverse_[cell] = k;
  }
}

bool ScanOrder::is_bijection() const {
  if (!covers_grid()) return false;
  std::vector<char> seen(cells(), 0);
  for (std::size_t cell : order_) {
    if (cell >= cells() || seen[cell]) return false;
    seen[cell] = 1;
  }
  for (std::size_t k = 0; k < order_.size(); ++k) {
    if (inverse_[order_[k]] != k) return false;
  }
  return true;
}

ScanOrder ScanOrder::reversed() const {
  return ScanOrder(h_, w_, std::vector<std::size_t>(order_.rbegin(), order_.rend()));
}

std::vector<std::size_t> MultiScan::coverage() const {
  if (directions.empty()) return {};
  std::vector<std::size_t> count(directions.front().cells(), 0);
  for (const auto& dir : directions) {
    for (std::size_t cell : dir.order()) ++count[cell];
  }
  return count;
}

std::vector<std::size_t> MultiScan::concatenated() const {
  std::vector<std::size_t> all;
  for (const auto& dir : directions) {
    all.insert(all.end(), dir.order().begin(), dir.order().end());
  }
  return all;
}

void MultiScan::validate() const {
  if (directions.empty()) throw ScanError("MultiScan: no directions");
  const auto h = directions.front().height();
  const auto w = directions.front().width();
  for (const auto& dir : directions) {
    if (dir.height() != h || dir.width() != w) {
      throw ScanError("MultiScan: member orders have different grid extents");
    }
  }
  for (std::size_t c : coverage()) {
    if (c == 0) throw ScanError("MultiScan: some cell is never visited");
  }
}

ScanOrder raster_scan(std::size_t h, std::size_t w) {
  require_extent(h, w, "raster_scan");
  std::vector<std::size_t> order(h * w);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return ScanOrder(h, w, std::move(order));
}

ScanOrder zigzag_scan(std::size_t h, std::size_t w) {
  require_extent(h, w, "zigzag_scan");
  std::vector<std::size_t> order;
  order.reserve(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t k = 0; k < w; ++k) {
      const std::size_t c = r % 2 == 0 ? k : w - 1 - k;
      order.push_back(r * w + c);
    }
  }
  return ScanOrder(h, w, std::move(order));
}

ScanOrder local_scan(std::size_t h, std::size_t w, std::size_t win) {
  require_extent(h, w, "local_scan");
  require_divides(win, h, w, "local_scan", "window");
  std::vector<std::size_t> order;
  order.reserve(h * w);
  for (std::size_t wr = 0; wr < h; wr += win) {
    for (std::size_t wc = 0; wc < w; wc += win) {
      for (std::size_t r = wr; r < wr + win; ++r) {
        for (std::size_t c = wc; c < wc + win; ++c) order.push_back(r * w + c);
      }
    }
  }
  return ScanOrder(h, w, std::move(order));
}

MultiScan single(ScanOrder order) {
  MultiScan ms;
  ms.directions.push_back(std::move(order));
  return ms;
}

MultiScan bidirectional(const ScanOrder& order) {
  MultiScan ms;
  ms.directions.push_back(order);
  ms.directions.push_back(order.reversed());
  return ms;
}

MultiScan cross_scan(std::size_t h, std::size_t w) {
  require_extent(h, w, "cross_scan");
  const ScanOrder rows = raster_scan(h, w);
  std::vector<std::size_t> cols;
  cols.reserve(h * w);
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) cols.push_back(r * w + c);
  }
  const ScanOrder col_order(h, w, std::move(cols));
  MultiScan ms;
  ms.directions = {rows, rows.reversed(), col_order, col_order.reversed()};
  return ms;
}

MultiScan efficient_scan(std::size_t h, std::size_t w, std::size_t stride) {
  require_extent(h, w, "efficient_scan");
  require_divides(stride, h, w, "efficient_scan", "stride");
  MultiScan ms;
  for (std::size_t i = 0; i < stride; ++i) {
    for (std::size_t j = 0; j < stride; ++j) {
      std::vector<std::size_t> order;
      for (std::size_t r = i; r < h; r += stride) {
        for (std::size_t c = j; c < w; c += stride) order.push_back(r * w + c);
      }
      ms.directions.emplace_back(h, w, std::move(order));
    }
  }
  return ms;
}

MultiScan make_scan(const std::string& strategy, std::size_t h, std::size_t w,
                    std::size_t param, Merge merge) {
  MultiScan ms;
  if (strategy == "raster") {
    ms = single(raster_scan(h, w));
  } else if (strategy == "bidirectional") {
    ms = bidirectional(raster_scan(h, w));
  } else if (strategy == "cross") {
    ms = cross_scan(h, w);
  } else if (strategy == "zigzag") {
    ms = single(zigzag_scan(h, w));
  } else if (strategy == "local") {
    ms = single(local_scan(h, w, param));
  } else if (strategy == "efficient") {
    ms = efficient_scan(h, w, param);
  } else {
    throw ScanError("unknown scan strategy '" + strategy +
                    "' (expected raster, bidirectional, cross, zigzag, local or efficient)");
  }
  ms.merge = merge;
  return ms;
}

std::vector<std::string> strategy_names() {
  return {"raster", "bidirectional", "cross", "zigzag", "local", "efficient"};
}

std::string render_ranks(const ScanOrder& order) {
  const std::size_t width =
      std::to_string(order.cells() == 0 ? 0 : order.cells() - 1).size();
  std::ostringstream out;
  for (std::size_t r = 0; r < order.height(); ++r) {
    for (std::size_t c = 0; c < order.width(); ++c) {
      const std::size_t rank = order.inverse()[r * order.width() + c];
      std::string cell = rank == kUnvisited ? "." : std::to_string(rank);
      if (c) out << ' ';
      out << std::string(width - std::min(width, cell.size()), ' ') << cell;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace mambadet::scan
