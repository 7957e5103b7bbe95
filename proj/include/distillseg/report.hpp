#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace distillseg {

struct ScoreRow {
    std::string label;
    /// ET, TC, WT; empty when the manifest lacks the report.
    std::optional<std::array<double, 3>> scores;
    bool standalone = false;
};

struct CellMarks {
    bool standalone_best = false;  ///< rendered underlined
    bool global_best = false;      ///< rendered bold
};

struct ScoreTable {
    std::vector<ScoreRow> rows;
    /// Row label rendered underlined (the selected stand-alone model), if any.
    std::optional<std::string> selected;

    /// Per-column optima with ties marked (>=); stand-alone optima consider
    /// stand-alone rows only, global optima every row present.
    std::vector<std::array<CellMarks, 3>> marks() const;
};

/// Rows UNet, Residual UNet, Cascaded UNet, Ensemble, Distilled Model.
ScoreTable table_from_manifest(const nlohmann::json& manifest);

enum class TableFormat { Markdown, Text, Csv };

/// Five-decimal fixed point. Markdown marks `_x_` (stand-alone optimum) and
/// `**x**` (global optimum); text uses the same markers; CSV adds mark columns.
std::string emit_table(const ScoreTable& table, TableFormat format);
std::string emit_table(const nlohmann::json& manifest, TableFormat format = TableFormat::Markdown);

/// Writes `curves_<kind>.svg` per stand-alone model and `comparison.svg`.
std::vector<std::filesystem::path> emit_plots(const nlohmann::json& manifest, const std::filesystem::path& out_dir);

/// Tables (table.md, table.txt, table.csv) plus plots under `out_dir`.
void emit_report(const nlohmann::json& manifest, const std::filesystem::path& out_dir);

}  // namespace distillseg
