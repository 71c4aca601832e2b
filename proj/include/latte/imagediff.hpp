#pragma once

// Column-sequence edit distance between two images and the annotated
// "delta view" built from it.
//
// An image is treated as a sequence of pixel columns. The edit script
// transforms the rendered image into the ground truth: Delete removes a
// rendered-only column, Insert adds a ground-truth-only column, Substitute
// replaces a rendered column by a differing ground-truth column.

#include "latte/raster.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace latte {

class DimensionError : public Error {
 public:
  using Error::Error;
};

enum class EditKind : std::uint8_t { Copy, Substitute, Delete, Insert };

inline constexpr std::string_view to_string(EditKind k) {
  switch (k) {
    case EditKind::Copy: return "copy";
    case EditKind::Substitute: return "substitute";
    case EditKind::Delete: return "delete";
    case EditKind::Insert: return "insert";
  }
  return "?";
}

struct EditOp {
  EditKind kind;
  std::optional<std::size_t> gt_index;
  std::optional<std::size_t> rendered_index;

  static EditOp copy(std::size_t g, std::size_t r) { return {EditKind::Copy, g, r}; }
  static EditOp substitute(std::size_t g, std::size_t r) { return {EditKind::Substitute, g, r}; }
  static EditOp remove(std::size_t r) { return {EditKind::Delete, std::nullopt, r}; }
  static EditOp insert(std::size_t g) { return {EditKind::Insert, g, std::nullopt}; }

  friend bool operator==(const EditOp&, const EditOp&) = default;
};

struct EditScript {
  std::vector<EditOp> ops;  // left-to-right image order
  std::size_t distance = 0;
};

/// Wagner-Fischer over two id sequences with backtracking.
///
/// Cell (i, j) covers gt[0..i) and rendered[0..j). Ties between equally cheap
/// predecessors resolve Insert first, then Copy/Substitute, then Delete.
/// Only one row of costs is live at a time; the per-cell choice table
/// (one byte per cell) drives the backtrack.
template <class Id>
EditScript edit_script(std::span<const Id> gt, std::span<const Id> rendered) {
  const std::size_t ng = gt.size();
  const std::size_t nr = rendered.size();
  const std::size_t stride = nr + 1;
  std::vector<EditKind> choice((ng + 1) * stride, EditKind::Copy);
  std::vector<std::uint32_t> prev(stride);
  std::vector<std::uint32_t> cur(stride);

  for (std::size_t j = 0; j <= nr; ++j) {
    prev[j] = static_cast<std::uint32_t>(j);
    choice[j] = EditKind::Delete;
  }
  for (std::size_t i = 1; i <= ng; ++i) {
    cur[0] = static_cast<std::uint32_t>(i);
    EditKind* row = &choice[i * stride];
    row[0] = EditKind::Insert;
    const Id& g = gt[i - 1];
    for (std::size_t j = 1; j <= nr; ++j) {
      const bool same = g == rendered[j - 1];
      const std::uint32_t sub = prev[j - 1] + (same ? 0u : 1u);
      const std::uint32_t ins = prev[j] + 1;
      const std::uint32_t del = cur[j - 1] + 1;
      const std::uint32_t best = std::min({sub, ins, del});
      if (ins == best) {
        row[j] = EditKind::Insert;
      } else if (sub == best) {
        row[j] = same ? EditKind::Copy : EditKind::Substitute;
      } else {
        row[j] = EditKind::Delete;
      }
      cur[j] = best;
    }
    std::swap(prev, cur);
  }

  EditScript out;
  out.distance = prev[nr];
  out.ops.reserve(std::max(ng, nr));
  std::size_t i = ng;
  std::size_t j = nr;
  while (i > 0 && j > 0) {
    switch (choice[i * stride + j]) {
      case EditKind::Copy:
        out.ops.push_back(EditOp::copy(i - 1, j - 1));
        --i;
        --j;
        break;
      case EditKind::Substitute:
        out.ops.push_back(EditOp::substitute(i - 1, j - 1));
        --i;
        --j;
        break;
      case EditKind::Insert:
        out.ops.push_back(EditOp::insert(i - 1));
        --i;
        break;
      case EditKind::Delete:
        out.ops.push_back(EditOp::remove(j - 1));
        --j;
        break;
    }
  }
  for (; i > 0; --i) out.ops.push_back(EditOp::insert(i - 1));
  for (; j > 0; --j) out.ops.push_back(EditOp::remove(j - 1));
  std::reverse(out.ops.begin(), out.ops.end());
  return out;
}

struct InternedColumns {
  std::vector<std::uint32_t> gt;
  std::vector<std::uint32_t> rendered;
  std::size_t distinct = 0;
};

/// Maps every pixel column of both images to a small integer id; equal ids
/// iff bit-identical columns.
inline InternedColumns intern_columns(const PixelGrid& gt, const PixelGrid& rendered) {
  if (gt.height() != rendered.height()) {
    throw DimensionError("column comparison needs equal heights (" + std::to_string(gt.height()) + " vs " +
                         std::to_string(rendered.height()) + ")");
  }
  std::unordered_map<std::string, std::uint32_t> ids;
  ids.reserve(gt.width() + rendered.width());
  std::string key(gt.height() * 3, '\0');
  auto intern = [&](const PixelGrid& img) {
    std::vector<std::uint32_t> out(img.width());
    for (std::size_t c = 0; c < img.width(); ++c) {
      for (std::size_t r = 0; r < img.height(); ++r) {
        const Pixel& p = img.at(r, c);
        key[r * 3] = static_cast<char>(p.r);
        key[r * 3 + 1] = static_cast<char>(p.g);
        key[r * 3 + 2] = static_cast<char>(p.b);
      }
      out[c] = ids.try_emplace(key, static_cast<std::uint32_t>(ids.size())).first->second;
    }
    return out;
  };
  InternedColumns cols;
  cols.gt = intern(gt);
  cols.rendered = intern(rendered);
  cols.distinct = ids.size();
  return cols;
}

/// Minimal column edit script turning `rendered` into `gt`.
inline EditScript wagner_fischer_star(const PixelGrid& gt, const PixelGrid& rendered) {
  const InternedColumns cols = intern_columns(gt, rendered);
  return edit_script<std::uint32_t>(cols.gt, cols.rendered);
}

// ---------------------------------------------------------------------------
// Annotation

inline constexpr Pixel kLightRed{255, 200, 200};
inline constexpr Pixel kLightBlue{200, 200, 255};
inline constexpr Pixel kRed{255, 0, 0};
inline constexpr Pixel kBlue{0, 0, 255};

struct AnnotatedColumns {
  std::vector<Pixel> gt;
  std::vector<Pixel> rendered;
};

/// Colours one column pair. All masks come from the original values:
/// white gt -> light red, white rendered -> light blue, gt ink missing from
/// rendered -> red, rendered ink missing from gt -> blue. Ink present in both
/// keeps its value.
inline AnnotatedColumns show_diff(std::span<const Pixel> gt_col, std::span<const Pixel> rendered_col) {
  if (gt_col.size() != rendered_col.size()) throw DimensionError("show_diff needs equal column heights");
  AnnotatedColumns out{std::vector<Pixel>(gt_col.begin(), gt_col.end()),
                       std::vector<Pixel>(rendered_col.begin(), rendered_col.end())};
  for (std::size_t r = 0; r < gt_col.size(); ++r) {
    const Pixel g = gt_col[r];
    const Pixel p = rendered_col[r];
    const bool differ = g != p;
    if (g.is_white()) out.gt[r] = kLightRed;
    if (p.is_white()) out.rendered[r] = kLightBlue;
    if (differ && p.is_white()) out.gt[r] = kRed;
    if (differ && g.is_white()) out.rendered[r] = kBlue;
  }
  return out;
}

enum class Orientation { Column, Row };

inline constexpr std::string_view to_string(Orientation o) { return o == Orientation::Column ? "column" : "row"; }

struct DeltaView {
  PixelGrid gt_annotated;
  PixelGrid rendered_annotated;
  Orientation orientation = Orientation::Column;
  std::size_t distance = 0;
  double edit_percentage = 0.0;  // distance / compared length of the gt image
  EditScript script;             // indices refer to the compared dimension
};

/// Column-wise delta view.
inline DeltaView image_edit(const PixelGrid& gt, const PixelGrid& rendered) {
  EditScript script = wagner_fischer_star(gt, rendered);
  PixelGrid g = gt;
  PixelGrid r = rendered;
  const std::vector<Pixel> blank(gt.height(), kWhite);
  for (const EditOp& op : script.ops) {
    switch (op.kind) {
      case EditKind::Copy:
        break;
      case EditKind::Delete: {
        const auto col = rendered.column(*op.rendered_index);
        r.set_column(*op.rendered_index, show_diff(blank, col).rendered);
        break;
      }
      case EditKind::Insert: {
        const auto col = gt.column(*op.gt_index);
        g.set_column(*op.gt_index, show_diff(col, blank).gt);
        break;
      }
      case EditKind::Substitute: {
        const auto gc = gt.column(*op.gt_index);
        const auto rc = rendered.column(*op.rendered_index);
        auto ann = show_diff(gc, rc);
        g.set_column(*op.gt_index, ann.gt);
        r.set_column(*op.rendered_index, ann.rendered);
        break;
      }
    }
  }
  const double pct = static_cast<double>(script.distance) / static_cast<double>(gt.width());
  return DeltaView{std::move(g), std::move(r), Orientation::Column, script.distance, pct, std::move(script)};
}

/// Row-wise delta view, computed on transposed images.
inline DeltaView image_edit_rows(const PixelGrid& gt, const PixelGrid& rendered) {
  DeltaView t = image_edit(transpose(gt), transpose(rendered));
  return DeltaView{transpose(t.gt_annotated), transpose(t.rendered_annotated), Orientation::Row, t.distance,
                   t.edit_percentage, std::move(t.script)};
}

/// Picks the orientation with the strictly smaller edit percentage, column
/// on ties. When only one orientation is comparable (heights or widths
/// differ), that one is returned.
inline DeltaView delta_view(const PixelGrid& gt, const PixelGrid& rendered) {
  const bool columns_ok = gt.height() == rendered.height();
  const bool rows_ok = gt.width() == rendered.width();
  if (!columns_ok && !rows_ok) {
    throw DimensionError("delta view needs a shared height or width: gt " + std::to_string(gt.height()) + "x" +
                         std::to_string(gt.width()) + ", rendered " + std::to_string(rendered.height()) + "x" +
                         std::to_string(rendered.width()));
  }
  if (!rows_ok) return image_edit(gt, rendered);
  if (!columns_ok) return image_edit_rows(gt, rendered);
  DeltaView col = image_edit(gt, rendered);
  if (col.distance == 0) return col;
  DeltaView row = image_edit_rows(gt, rendered);
  return row.edit_percentage < col.edit_percentage ? std::move(row) : std::move(col);
}

inline constexpr std::size_t kDividerRows = 4;
inline constexpr Pixel kDividerGray{128, 128, 128};

/// Stacks the annotated pair into one image: gt on top, a gray divider band,
/// rendered below. The narrower half is right-padded with white.
inline PixelGrid compose_model_view(const DeltaView& dv) {
  const PixelGrid& top = dv.gt_annotated;
  const PixelGrid& bottom = dv.rendered_annotated;
  const std::size_t width = std::max(top.width(), bottom.width());
  PixelGrid out(top.height() + kDividerRows + bottom.height(), width, kWhite);
  for (std::size_t r = 0; r < top.height(); ++r) {
    for (std::size_t c = 0; c < top.width(); ++c) out.at(r, c) = top.at(r, c);
  }
  for (std::size_t r = 0; r < kDividerRows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out.at(top.height() + r, c) = kDividerGray;
  }
  const std::size_t base = top.height() + kDividerRows;
  for (std::size_t r = 0; r < bottom.height(); ++r) {
    for (std::size_t c = 0; c < bottom.width(); ++c) out.at(base + r, c) = bottom.at(r, c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Script statistics

struct EditSummary {
  std::array<std::size_t, 4> ops{};     // indexed by EditKind
  std::array<std::size_t, 4> blocks{};  // maximal same-kind runs, by EditKind

  std::size_t op_count(EditKind k) const { return ops[static_cast<std::size_t>(k)]; }
  std::size_t block_count(EditKind k) const { return blocks[static_cast<std::size_t>(k)]; }
};

inline EditSummary summarize(const EditScript& script) {
  EditSummary s;
  std::optional<EditKind> last;
  for (const EditOp& op : script.ops) {
    const auto k = static_cast<std::size_t>(op.kind);
    ++s.ops[k];
    if (last != op.kind) ++s.blocks[k];
    last = op.kind;
  }
  return s;
}

}  // namespace latte
