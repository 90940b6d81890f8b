#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tpsim/collapse/collapse.hpp"
#include "tpsim/dgm/trial.hpp"
#include "tpsim/error.hpp"
#include "tpsim/numcore/linalg.hpp"

namespace tpsim {

/// Fixed-effect structure per visit: arm cells (Simple), arm x IE status
/// (Status) or arm x IE pattern (Pattern), always plus a baseline slope.
enum class DesignStructure { Simple, Status, Pattern };

struct CellKey {
  Arm arm = Arm::Control;
  int level = 0;  ///< 0 for Simple; coded level otherwise
  friend bool operator==(const CellKey&, const CellKey&) = default;
};

/// Visit-blocked fixed-effect layout. Block v holds the visit-v cell
/// intercepts followed by the visit-v baseline slope. Baseline enters centered
/// at the grand mean, so each cell intercept is that cell's LS-mean.
class MmrmDesign {
 public:
  MmrmDesign(const TrialDataset& ds, DesignStructure structure, std::optional<PatternCoding> coding = std::nullopt)
      : structure_(structure), coding_(std::move(coding)) {
    if (structure != DesignStructure::Simple && !coding_)
      throw InvalidParameter("status and pattern designs need a pattern coding");
    if (coding_) {
      const bool want_status = structure == DesignStructure::Status;
      if (want_status != (coding_->target == CodingTarget::Status))
        throw InvalidParameter("pattern coding target does not match the design structure");
    }
    center_ = ds.baseline_mean();
    int offset = 0;
    for (int v = 1; v <= kPostVisits; ++v) {
      auto& cells = cells_[v - 1];
      std::vector<int> observed;
      for (const auto& p : ds.patients) {
        const CellKey key{p.arm, level_of(p, v)};
        std::size_t k = 0;
        while (k < cells.size() && !(cells[k] == key)) ++k;
        if (k == cells.size()) {
          cells.push_back(key);
          observed.push_back(0);
        }
        observed[k] += p.observed(v);
      }
      // stable order: control before treatment, levels ascending
      std::vector<std::size_t> idx(cells.size());
      for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (cells[a].arm != cells[b].arm) return cells[a].arm < cells[b].arm;
        return cells[a].level < cells[b].level;
      });
      std::vector<CellKey> sorted;
      for (auto k : idx) {
        if (observed[k] == 0)
          throw RankDeficient("no observed outcome for cell arm=" + std::string(to_string(cells[k].arm)) +
                              " level=" + std::to_string(cells[k].level) + " at visit " + std::to_string(v));
        sorted.push_back(cells[k]);
      }
      cells = std::move(sorted);
      offset_[v - 1] = offset;
      size_[v - 1] = static_cast<int>(cells.size()) + 1;
      offset += size_[v - 1];
    }
    p_ = offset;
  }

  [[nodiscard]] DesignStructure structure() const { return structure_; }
  [[nodiscard]] const std::optional<PatternCoding>& coding() const { return coding_; }
  [[nodiscard]] int p() const { return p_; }
  [[nodiscard]] double baseline_center() const { return center_; }
  [[nodiscard]] int offset(int visit) const { return offset_[visit - 1]; }
  [[nodiscard]] int size(int visit) const { return size_[visit - 1]; }
  [[nodiscard]] const std::vector<CellKey>& cells(int visit) const { return cells_[visit - 1]; }

  [[nodiscard]] int level_of(const PatientRecord& p, int visit) const {
    return structure_ == DesignStructure::Simple ? 0 : coding_->level_of(p, visit);
  }

  /// Position of a cell inside its visit block, or -1 when the cell is absent.
  [[nodiscard]] int local_cell(int visit, CellKey key) const {
    const auto& c = cells_[visit - 1];
    for (std::size_t k = 0; k < c.size(); ++k)
      if (c[k] == key) return static_cast<int>(k);
    return -1;
  }

  [[nodiscard]] int cell_column(int visit, CellKey key) const {
    const int k = local_cell(visit, key);
    return k < 0 ? -1 : offset(visit) + k;
  }

  [[nodiscard]] int slope_column(int visit) const { return offset(visit) + size(visit) - 1; }

  /// Visit-v row of a patient's design restricted to the visit block.
  [[nodiscard]] Vector local_row(const PatientRecord& p, int visit) const {
    Vector x = Vector::Zero(size(visit));
    x[local_cell(visit, {p.arm, level_of(p, visit)})] = 1.0;
    x[size(visit) - 1] = p.baseline() - center_;
    return x;
  }

 private:
  DesignStructure structure_;
  std::optional<PatternCoding> coding_;
  double center_ = 0;
  std::array<std::vector<CellKey>, kPostVisits> cells_;
  std::array<int, kPostVisits> offset_{};
  std::array<int, kPostVisits> size_{};
  int p_ = 0;
};

/// Patients sharing one observed-visit subset, with the sufficient
/// statistics the likelihood needs. Block indices are positions in `visits`.
struct MaskGroup {
  unsigned mask = 0;
  std::vector<int> visits;  ///< 1-based visit numbers, ascending
  int n = 0;
  std::vector<std::vector<Matrix>> sxx;  ///< [a][b]: sum x_a x_b^T
  std::vector<std::vector<Vector>> sxy;  ///< [a][b]: sum x_a y_b
  Matrix syy;                            ///< sum y y^T
};

struct MmrmData {
  std::vector<MaskGroup> groups;
  int n_obs = 0;
  int n_subjects = 0;
};

/// Outcome is change from baseline at each observed post-baseline visit.
inline MmrmData build_mmrm_data(const TrialDataset& ds, const MmrmDesign& design) {
  MmrmData out;
  std::array<int, 1 << kPostVisits> slot;
  slot.fill(-1);
  for (const auto& p : ds.patients) {
    unsigned mask = 0;
    for (int v = 1; v <= kPostVisits; ++v)
      if (p.observed(v)) mask |= 1u << (v - 1);
    if (mask == 0) continue;
    if (slot[mask] < 0) {
      slot[mask] = static_cast<int>(out.groups.size());
      MaskGroup g;
      g.mask = mask;
      for (int v = 1; v <= kPostVisits; ++v)
        if (mask & (1u << (v - 1))) g.visits.push_back(v);
      const auto k = g.visits.size();
      g.sxx.assign(k, std::vector<Matrix>(k));
      g.sxy.assign(k, std::vector<Vector>(k));
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
          g.sxx[a][b] = Matrix::Zero(design.size(g.visits[a]), design.size(g.visits[b]));
          g.sxy[a][b] = Vector::Zero(design.size(g.visits[a]));
        }
      g.syy = Matrix::Zero(k, k);
      out.groups.push_back(std::move(g));
    }
    auto& g = out.groups[slot[mask]];
    const auto k = g.visits.size();
    std::vector<Vector> x(k);
    Vector y(k);
    for (std::size_t a = 0; a < k; ++a) {
      x[a] = design.local_row(p, g.visits[a]);
      y[a] = p.change(g.visits[a]);
    }
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        g.sxx[a][b].noalias() += x[a] * x[b].transpose();
        g.sxy[a][b] += x[a] * y[b];
      }
    g.syy.noalias() += y * y.transpose();
    g.n += 1;
    out.n_obs += static_cast<int>(k);
    out.n_subjects += 1;
  }
  std::sort(out.groups.begin(), out.groups.end(), [](const MaskGroup& a, const MaskGroup& b) { return a.mask < b.mask; });
  return out;
}

}  // namespace tpsim
