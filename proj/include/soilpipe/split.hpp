#pragma once

// Train / validation / test assignment: a seeded single random split and
// grid-blocked spatial cross-validation.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "soilpipe/core/hash.hpp"
#include "soilpipe/core/random.hpp"
#include "soilpipe/tabular.hpp"

namespace soilpipe {

enum class Role { Train, Validation, Test };
enum class SplitStrategy { Single, SpatialGrid };

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::Train: return "train";
    case Role::Validation: return "validation";
    case Role::Test: return "test";
  }
  return "?";
}

inline Role parse_role(std::string_view s) {
  if (s == "train") return Role::Train;
  if (s == "validation") return Role::Validation;
  if (s == "test") return Role::Test;
  throw Error("unknown role '" + std::string(s) + "'");
}

inline std::string_view strategy_name(SplitStrategy s) {
  return s == SplitStrategy::Single ? "single" : "spatial_grid";
}

inline SplitStrategy parse_strategy(std::string_view s) {
  if (s == "single") return SplitStrategy::Single;
  if (s == "spatial_grid") return SplitStrategy::SpatialGrid;
  throw Error("unknown split strategy '" + std::string(s) + "'");
}

struct Assignment {
  PointId point_id = 0;
  Role role = Role::Train;
  int fold = -1;  ///< CV fold for non-test samples of a spatial plan, else -1.

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Role of every sample, in input order. Spatial plans keep non-test samples
/// as Train with a fold index; validation is decided per CV round.
struct SplitPlan {
  SplitStrategy strategy = SplitStrategy::Single;
  std::uint64_t seed = 0;
  double ratio = 0.8;
  double grid_deg = 0.0;
  int folds = 0;
  std::vector<Assignment> assignments;

  std::vector<PointId> ids_with_role(Role role) const {
    std::vector<PointId> out;
    for (const auto& a : assignments)
      if (a.role == role) out.push_back(a.point_id);
    return out;
  }

  std::size_t count(Role role) const {
    return static_cast<std::size_t>(std::count_if(
        assignments.begin(), assignments.end(), [&](const Assignment& a) { return a.role == role; }));
  }

  std::unordered_map<PointId, Assignment> by_id() const {
    std::unordered_map<PointId, Assignment> out;
    for (const auto& a : assignments) out[a.point_id] = a;
    return out;
  }

  friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

class TooFewSamples : public Error {
 public:
  explicit TooFewSamples(std::size_t n) : Error("split needs at least 2 samples, got " + std::to_string(n)) {}
};
class TooFewCells : public Error {
 public:
  TooFewCells(std::size_t cells, int folds)
      : Error("spatial split needs at least " + std::to_string(folds + 1) +
              " non-empty grid cells, got " + std::to_string(cells)) {}
};
class DegenerateGrid : public Error {
 public:
  DegenerateGrid() : Error("grid cell size must be positive") {}
};
class WrongStrategy : public Error {
 public:
  WrongStrategy() : Error("operation requires a spatial_grid plan") {}
};

/// Number of test samples for a train fraction: ceil((1 - ratio) * n), the
/// remainder trains. 18,471 at 0.8 gives 14,776 / 3,695.
inline std::size_t single_split_test_count(std::size_t n, double ratio) {
  const double t = (1.0 - ratio) * static_cast<double>(n);
  auto test = static_cast<std::size_t>(std::ceil(t - 1e-9));
  return std::min(test, n);
}

/// Seeded random split. Ids are sorted before shuffling so the assignment
/// depends only on the id set and the seed, not on row order.
inline SplitPlan single_split(std::span<const PointId> ids, double ratio, std::uint64_t seed) {
  if (ids.size() < 2) throw TooFewSamples(ids.size());
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("split ratio must be in (0, 1)");
  std::vector<PointId> order(ids.begin(), ids.end());
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end())
    throw DuplicateKey(*std::adjacent_find(order.begin(), order.end()));
  Rng rng(seed);
  rng.shuffle(std::span(order));
  const std::size_t n_test = single_split_test_count(order.size(), ratio);
  std::unordered_map<PointId, Role> role;
  for (std::size_t i = 0; i < order.size(); ++i)
    role[order[i]] = i < order.size() - n_test ? Role::Train : Role::Test;

  SplitPlan plan;
  plan.strategy = SplitStrategy::Single;
  plan.seed = seed;
  plan.ratio = ratio;
  for (auto id : ids) plan.assignments.push_back({id, role[id], -1});
  return plan;
}

inline SplitPlan single_split(std::span<const SampleRecord> samples, double ratio, std::uint64_t seed) {
  std::vector<PointId> ids;
  for (const auto& s : samples) ids.push_back(s.point_id);
  return single_split(ids, ratio, seed);
}

// ---------------------------------------------------------------------------
// Spatial grid

struct GridCell {
  std::int64_t lat_idx = 0;
  std::int64_t lon_idx = 0;
  std::vector<PointId> members;
};

/// Cell index by floor division anchored at 0 degrees; boundary points fall in
/// the cell of the floor index.
inline std::pair<std::int64_t, std::int64_t> cell_index(double lat, double lon, double grid_deg) {
  return {static_cast<std::int64_t>(std::floor(lat / grid_deg)),
          static_cast<std::int64_t>(std::floor(lon / grid_deg))};
}

inline std::vector<GridCell> grid_cells(std::span<const SampleRecord> samples, double grid_deg) {
  if (!(grid_deg > 0.0)) throw DegenerateGrid();
  std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> index;
  std::vector<GridCell> cells;
  for (const auto& s : samples) {
    if (!valid_coordinates(s.lat, s.lon)) throw BoundsError(s.point_id, s.lat, s.lon);
    auto key = cell_index(s.lat, s.lon, grid_deg);
    auto [it, inserted] = index.emplace(key, cells.size());
    if (inserted) cells.push_back({key.first, key.second, {}});
    cells[it->second].members.push_back(s.point_id);
  }
  std::sort(cells.begin(), cells.end(), [](const GridCell& a, const GridCell& b) {
    return std::pair(a.lat_idx, a.lon_idx) < std::pair(b.lat_idx, b.lon_idx);
  });
  return cells;
}

struct SpatialSplitOptions {
  double grid_deg = 4.0;
  double test_share = 0.2;  ///< target share of the held-out test cells
  int folds = 5;
  std::uint64_t seed = 0;
};

/// Grid-blocked split. Cells are ordered largest first with seeded tie order
/// and taken into the test set while they fit under the target, or when the
/// overshoot is smaller than the remaining shortfall (which ends the scan).
/// Remaining cells are dealt round-robin, in the same order, into folds.
inline SplitPlan spatial_grid_split(std::span<const SampleRecord> samples,
                                    const SpatialSplitOptions& opts) {
  if (!(opts.grid_deg > 0.0)) throw DegenerateGrid();
  if (opts.folds < 2) throw Error("spatial split needs at least 2 folds");
  auto cells = grid_cells(samples, opts.grid_deg);
  if (cells.size() < static_cast<std::size_t>(opts.folds) + 1)
    throw TooFewCells(cells.size(), opts.folds);

  std::vector<std::size_t> order(cells.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(opts.seed);
  rng.shuffle(std::span(order));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cells[a].members.size() > cells[b].members.size();
  });

  const double target = opts.test_share * static_cast<double>(samples.size());
  std::vector<bool> is_test(cells.size(), false);
  double taken = 0.0;
  std::size_t n_test_cells = 0;
  const std::size_t max_test_cells = cells.size() - static_cast<std::size_t>(opts.folds);
  for (std::size_t pos = 0; pos < order.size() && taken < target && n_test_cells < max_test_cells; ++pos) {
    const auto c = order[pos];
    const double size = static_cast<double>(cells[c].members.size());
    const double after = taken + size;
    if (after <= target || after - target < target - taken) {
      is_test[c] = true;
      taken = after;
      ++n_test_cells;
    }
  }
  if (n_test_cells == 0) {
    is_test[order.back()] = true;
  }

  std::unordered_map<PointId, Assignment> assigned;
  int next_fold = 0;
  for (auto c : order) {
    for (auto id : cells[c].members) {
      if (is_test[c]) assigned[id] = {id, Role::Test, -1};
      else assigned[id] = {id, Role::Train, next_fold};
    }
    if (!is_test[c]) next_fold = (next_fold + 1) % opts.folds;
  }

  SplitPlan plan;
  plan.strategy = SplitStrategy::SpatialGrid;
  plan.seed = opts.seed;
  plan.ratio = 1.0 - opts.test_share;
  plan.grid_deg = opts.grid_deg;
  plan.folds = opts.folds;
  for (const auto& s : samples) plan.assignments.push_back(assigned.at(s.point_id));
  return plan;
}

struct FoldRound {
  std::vector<PointId> train;
  std::vector<PointId> validation;
};

/// One round per fold; each fold is the validation set exactly once and test
/// samples never appear.
inline std::vector<FoldRound> fold_rounds(const SplitPlan& plan) {
  if (plan.strategy != SplitStrategy::SpatialGrid) throw WrongStrategy();
  std::vector<FoldRound> rounds(static_cast<std::size_t>(plan.folds));
  for (const auto& a : plan.assignments) {
    if (a.role == Role::Test) continue;
    for (int k = 0; k < plan.folds; ++k) {
      auto& round = rounds[static_cast<std::size_t>(k)];
      (a.fold == k ? round.validation : round.train).push_back(a.point_id);
    }
  }
  return rounds;
}

// ---------------------------------------------------------------------------
// Serialization: "# key=value" metadata lines, then point_id,role,fold.

inline std::string plan_to_string(const SplitPlan& plan) {
  std::ostringstream out;
  out << "# strategy=" << strategy_name(plan.strategy) << '\n'
      << "# seed=" << plan.seed << '\n'
      << "# ratio=" << format_double(plan.ratio) << '\n'
      << "# grid_deg=" << format_double(plan.grid_deg) << '\n'
      << "# folds=" << plan.folds << '\n'
      << "point_id,role,fold\n";
  for (const auto& a : plan.assignments)
    out << a.point_id << ',' << role_name(a.role) << ',' << a.fold << '\n';
  return out.str();
}

inline SplitPlan parse_plan(std::istream& in) {
  auto file = parse_delimited(in);
  SplitPlan plan;
  for (const auto& c : file.comments) {
    auto kv = trim(c);
    auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    auto key = trim(kv.substr(0, eq));
    auto value = trim(kv.substr(eq + 1));
    if (key == "strategy") plan.strategy = parse_strategy(value);
    else if (key == "seed") plan.seed = parse_uint64(value, 0);
    else if (key == "ratio") plan.ratio = parse_double(value, 0);
    else if (key == "grid_deg") plan.grid_deg = parse_double(value, 0);
    else if (key == "folds") plan.folds = static_cast<int>(parse_int(value, 0));
  }
  if (file.header != std::vector<std::string>{"point_id", "role", "fold"})
    throw ParseError(1, "split plan header must be point_id,role,fold");
  for (std::size_t r = 0; r < file.rows.size(); ++r) {
    const auto& row = file.rows[r];
    plan.assignments.push_back({parse_int(row[0], file.line_numbers[r]), parse_role(row[1]),
                                static_cast<int>(parse_int(row[2], file.line_numbers[r]))});
  }
  return plan;
}

inline SplitPlan read_plan(const std::string& path) {
  std::istringstream in(read_text_file(path));
  return parse_plan(in);
}

/// Content fingerprint used to tie trained models to the plan they used.
inline std::string plan_hash(const SplitPlan& plan) { return hex64(fnv1a(plan_to_string(plan))); }

}  // namespace soilpipe
