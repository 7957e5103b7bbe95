#include "distillseg/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "distillseg/error.hpp"
#include "distillseg/network.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace distillseg {

std::vector<std::array<CellMarks, 3>> ScoreTable::marks() const {
    std::vector<std::array<CellMarks, 3>> out(rows.size());
    for (int col = 0; col < 3; ++col) {
        std::optional<double> best_sa, best_all;
        for (const auto& r : rows) {
            if (!r.scores) continue;
            const double v = (*r.scores)[col];
            best_all = best_all ? std::max(*best_all, v) : v;
            if (r.standalone) best_sa = best_sa ? std::max(*best_sa, v) : v;
        }
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!rows[i].scores) continue;
            const double v = (*rows[i].scores)[col];
            out[i][col].standalone_best = rows[i].standalone && best_sa && v >= *best_sa;
            out[i][col].global_best = best_all && v >= *best_all;
        }
    }
    return out;
}

namespace {

std::optional<std::array<double, 3>> report_scores(const json& j) {
    if (!j.is_object() || !j.contains("ET")) return std::nullopt;
    return std::array<double, 3>{j.at("ET").get<double>(), j.at("TC").get<double>(), j.at("WT").get<double>()};
}

const json& at_path(const json& j, std::initializer_list<const char*> keys) {
    static const json null;
    const json* cur = &j;
    for (const char* k : keys) {
        if (!cur->is_object() || !cur->contains(k)) return null;
        cur = &cur->at(k);
    }
    return *cur;
}

std::string fixed5(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(5) << v;
    return os.str();
}

std::string decorate(const std::string& v, const CellMarks& m) {
    std::string s = v;
    if (m.standalone_best) s = "_" + s + "_";
    if (m.global_best) s = "**" + s + "**";
    return s;
}

const char* kColumns[3] = {"Enhancing Tumor", "Tumor Core", "Whole Tumor"};

}  // namespace

ScoreTable table_from_manifest(const json& manifest) {
    ScoreTable t;
    for (auto kind : kNetworkKinds)
        t.rows.push_back({kind_label(kind), report_scores(at_path(manifest, {"models", kind_name(kind).c_str(), "report"})),
                          true});
    t.rows.push_back({"Ensemble", report_scores(at_path(manifest, {"ensemble", "report"})), false});
    t.rows.push_back({"Distilled Model", report_scores(at_path(manifest, {"student", "report"})), false});
    if (manifest.contains("best_kind")) t.selected = kind_label(parse_kind(manifest.at("best_kind").get<std::string>()));
    return t;
}

std::string emit_table(const ScoreTable& table, TableFormat format) {
    const auto marks = table.marks();
    std::ostringstream os;
    if (format == TableFormat::Csv) {
        os << "approach,ET,TC,WT,ET_mark,TC_mark,WT_mark\n";
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            const auto& r = table.rows[i];
            os << r.label;
            for (int c = 0; c < 3; ++c) os << ',' << (r.scores ? fixed5((*r.scores)[c]) : "");
            for (int c = 0; c < 3; ++c) {
                std::string m;
                if (marks[i][c].standalone_best) m += "standalone_best";
                if (marks[i][c].global_best) m += m.empty() ? "global_best" : "+global_best";
                os << ',' << m;
            }
            os << '\n';
        }
        return os.str();
    }

    std::vector<std::array<std::string, 4>> cells;
    cells.push_back({"Approach", kColumns[0], kColumns[1], kColumns[2]});
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        std::array<std::string, 4> row;
        row[0] = table.selected && *table.selected == r.label ? "_" + r.label + "_" : r.label;
        for (int c = 0; c < 3; ++c) row[c + 1] = r.scores ? decorate(fixed5((*r.scores)[c]), marks[i][c]) : "-";
        cells.push_back(row);
    }
    std::array<std::size_t, 4> width{};
    for (const auto& row : cells)
        for (int c = 0; c < 4; ++c) width[c] = std::max(width[c], row[c].size());

    auto line = [&](const std::array<std::string, 4>& row, const char* sep, const char* edge) {
        os << edge;
        for (int c = 0; c < 4; ++c) {
            os << ' ' << std::left << std::setw(static_cast<int>(width[c])) << row[c] << ' ';
            os << (c < 3 ? sep : edge);
        }
        os << '\n';
    };
    if (format == TableFormat::Markdown) {
        line(cells[0], "|", "|");
        os << '|';
        for (int c = 0; c < 4; ++c) os << std::string(width[c] + 2, '-') << '|';
        os << '\n';
        for (std::size_t i = 1; i < cells.size(); ++i) line(cells[i], "|", "|");
    } else {
        line(cells[0], " ", "");
        std::size_t total = 0;
        for (auto w : width) total += w + 3;
        os << std::string(total - 1, '-') << '\n';
        for (std::size_t i = 1; i < cells.size(); ++i) line(cells[i], " ", "");
        os << "\n_x_ best stand-alone score, **x** best overall score\n";
    }
    return os.str();
}

std::string emit_table(const json& manifest, TableFormat format) {
    return emit_table(table_from_manifest(manifest), format);
}

namespace {

struct Series {
    std::string name;
    std::string color;
    std::vector<std::pair<double, double>> points;
    bool dashed = false;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

// One line-chart panel at (ox, oy) of size w x h.
void panel(std::ostringstream& os, double ox, double oy, double w, double h, const std::string& title,
           const std::string& xlabel, const std::vector<Series>& series) {
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    bool any = false;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (!any) x0 = x1 = x, y0 = y1 = y, any = true;
            x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
        }
    if (x1 - x0 < 1e-12) x0 -= 1, x1 += 1;
    if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
    y0 = std::min(y0, 0.0);
    const double ml = 50, mb = 35, mt = 25, mr = 10;
    const double pw = w - ml - mr, ph = h - mt - mb;
    auto X = [&](double x) { return ox + ml + (x - x0) / (x1 - x0) * pw; };
    auto Y = [&](double y) { return oy + mt + (1 - (y - y0) / (y1 - y0)) * ph; };

    os << "<text x=\"" << num(ox + w / 2) << "\" y=\"" << num(oy + 16) << "\" text-anchor=\"middle\" font-size=\"13\">"
       << esc(title) << "</text>\n";
    os << "<rect x=\"" << num(ox + ml) << "\" y=\"" << num(oy + mt) << "\" width=\"" << num(pw) << "\" height=\""
       << num(ph) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
        os << "<text x=\"" << num(ox + ml - 4) << "\" y=\"" << num(Y(yv) + 4)
           << "\" text-anchor=\"end\" font-size=\"10\">" << num(std::round(yv * 1000) / 1000) << "</text>\n";
        os << "<text x=\"" << num(X(xv)) << "\" y=\"" << num(oy + h - mb + 14)
           << "\" text-anchor=\"middle\" font-size=\"10\">" << num(std::round(xv * 10) / 10) << "</text>\n";
    }
    os << "<text x=\"" << num(ox + ml + pw / 2) << "\" y=\"" << num(oy + h - 4)
       << "\" text-anchor=\"middle\" font-size=\"11\">" << esc(xlabel) << "</text>\n";
    double ly = oy + mt + 12;
    for (const auto& s : series) {
        if (s.points.empty()) continue;
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
           << (s.dashed ? " stroke-dasharray=\"4 3\"" : "") << " points=\"";
        for (const auto& [x, y] : s.points) os << num(X(x)) << ',' << num(Y(y)) << ' ';
        os << "\"/>\n";
        for (const auto& [x, y] : s.points)
            os << "<circle cx=\"" << num(X(x)) << "\" cy=\"" << num(Y(y)) << "\" r=\"2\" fill=\"" << s.color << "\"/>\n";
        os << "<text x=\"" << num(ox + ml + pw - 6) << "\" y=\"" << num(ly) << "\" text-anchor=\"end\" font-size=\"10\" fill=\""
           << s.color << "\">" << esc(s.name) << "</text>\n";
        ly += 12;
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

}  // namespace

std::vector<fs::path> emit_plots(const json& manifest, const fs::path& out_dir) {
    ensure_dir(out_dir);
    std::vector<fs::path> written;
    for (auto kind : kNetworkKinds) {
        const json& history = at_path(manifest, {"models", kind_name(kind).c_str(), "history"});
        Series loss{"total loss", kPalette[0], {}}, dice_loss{"dice loss", kPalette[3], {}, true},
            bce{"bce", kPalette[4], {}, true};
        std::array<Series, 3> val{Series{"ET", kPalette[1], {}}, Series{"TC", kPalette[2], {}},
                                  Series{"WT", kPalette[0], {}}};
        if (history.is_array())
            for (const auto& rec : history) {
                const double e = rec.at("epoch").get<double>() + 1;
                loss.points.emplace_back(e, rec.at("train").at("total").get<double>());
                dice_loss.points.emplace_back(e, rec.at("train").at("dice_loss").get<double>());
                bce.points.emplace_back(e, rec.at("train").at("bce").get<double>());
                if (const auto s = report_scores(rec.value("validation", json())))
                    for (int r = 0; r < 3; ++r) val[r].points.emplace_back(e, (*s)[r]);
            }
        std::ostringstream os;
        os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"820\" height=\"320\" font-family=\"sans-serif\">\n"
           << "<rect width=\"820\" height=\"320\" fill=\"white\"/>\n";
        panel(os, 0, 0, 410, 320, kind_label(kind) + ": training loss", "epoch", {loss, dice_loss, bce});
        panel(os, 410, 0, 410, 320, kind_label(kind) + ": validation dice", "epoch", {val[0], val[1], val[2]});
        os << "</svg>\n";
        const fs::path p = out_dir / ("curves_" + kind_name(kind) + ".svg");
        write_text(p, os.str());
        written.push_back(p);
    }

    const ScoreTable table = table_from_manifest(manifest);
    const double w = 820, h = 340, ml = 50, mb = 60, mt = 30;
    const double pw = w - ml - 20, ph = h - mt - mb;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" font-family=\"sans-serif\">\n<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n"
       << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">Test dice by region</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = mt + ph * (1 - i / 4.0);
        os << "<line x1=\"" << ml << "\" x2=\"" << ml + pw << "\" y1=\"" << num(y) << "\" y2=\"" << num(y)
           << "\" stroke=\"#ddd\"/>\n<text x=\"" << ml - 4 << "\" y=\"" << num(y + 4)
           << "\" text-anchor=\"end\" font-size=\"10\">" << num(i / 4.0) << "</text>\n";
    }
    const double group = pw / 3, bar = group / (static_cast<double>(table.rows.size()) + 1);
    for (int r = 0; r < 3; ++r) {
        os << "<text x=\"" << num(ml + group * (r + 0.5)) << "\" y=\"" << num(mt + ph + 16)
           << "\" text-anchor=\"middle\" font-size=\"11\">" << kColumns[r] << "</text>\n";
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            if (!table.rows[i].scores) continue;
            const double v = std::clamp((*table.rows[i].scores)[r], 0.0, 1.0);
            const double x = ml + group * r + bar * (static_cast<double>(i) + 0.5);
            os << "<rect x=\"" << num(x) << "\" y=\"" << num(mt + ph * (1 - v)) << "\" width=\"" << num(bar * 0.9)
               << "\" height=\"" << num(ph * v) << "\" fill=\"" << kPalette[i % 5] << "\"/>\n";
        }
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const double x = ml + static_cast<double>(i) * pw / static_cast<double>(table.rows.size());
        os << "<rect x=\"" << num(x) << "\" y=\"" << num(h - 22) << "\" width=\"10\" height=\"10\" fill=\""
           << kPalette[i % 5] << "\"/><text x=\"" << num(x + 14) << "\" y=\"" << num(h - 13) << "\" font-size=\"11\">"
           << esc(table.rows[i].label) << (table.rows[i].scores ? "" : " (n/a)") << "</text>\n";
    }
    os << "</svg>\n";
    const fs::path bars = out_dir / "comparison.svg";
    write_text(bars, os.str());
    written.push_back(bars);
    return written;
}

void emit_report(const json& manifest, const fs::path& out_dir) {
    ensure_dir(out_dir);
    const ScoreTable table = table_from_manifest(manifest);
    write_text(out_dir / "table.md", emit_table(table, TableFormat::Markdown));
    write_text(out_dir / "table.txt", emit_table(table, TableFormat::Text));
    write_text(out_dir / "table.csv", emit_table(table, TableFormat::Csv));
    emit_plots(manifest, out_dir / "plots");
}

}  // namespace distillseg
