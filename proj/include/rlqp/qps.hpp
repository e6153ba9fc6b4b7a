#pragma once

#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlqp/problem.hpp"

namespace rlqp {

/// Faithful record of one QPS file: MPS sections plus a quadratic objective
/// section. Names are kept as written; resolution to indices happens in
/// to_qp. The objective row is the single N row.
struct QpsDocument {
  struct RowDecl {
    char type = 'N';  // N, L, G or E
    std::string name;
  };
  struct ColEntry {
    std::string col;
    std::string row;
    double value = 0.0;
  };
  struct NamedValue {
    std::string row;
    double value = 0.0;
  };
  struct BoundEntry {
    std::string type;  // UP, LO, FX, FR, MI or PL
    std::string col;
    double value = 0.0;
  };
  struct QuadEntry {
    std::string col1;
    std::string col2;
    double value = 0.0;
  };

  std::string name;
  std::string objective_row;
  std::vector<RowDecl> rows;
  std::vector<ColEntry> columns;
  std::vector<NamedValue> rhs;
  std::vector<NamedValue> ranges;
  std::vector<BoundEntry> bounds;
  std::vector<QuadEntry> quad;
  // QMATRIX lists the full symmetric matrix, QUADOBJ one triangle
  bool quad_full_matrix = false;

  Index num_cols() const {
    std::unordered_map<std::string, Index> seen;
    for (const auto& e : columns) seen.emplace(e.col, 0);
    return static_cast<Index>(seen.size());
  }
  Index num_rows() const { return static_cast<Index>(rows.size()) - 1; }
};

namespace detail {

[[noreturn]] inline void qps_fail(int line, const std::string& msg) {
  throw std::runtime_error("qps line " + std::to_string(line) + ": " + msg);
}

inline double qps_number(const std::string& tok, int line) {
  double v = 0.0;
  const char* begin = tok.data();
  const char* end = begin + tok.size();
  if (begin != end && *begin == '+') begin++;  // from_chars rejects a leading plus
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || ptr != end || begin == end)
    qps_fail(line, "malformed numeric field '" + tok + "'");
  return v;
}

inline std::vector<std::string> qps_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(std::move(tok));
  return out;
}

inline void qps_format(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace detail

/// Reads a QPS document. Sections must appear in the order NAME, ROWS,
/// COLUMNS, RHS, RANGES, BOUNDS, QUADOBJ (or QMATRIX), ENDATA; RANGES,
/// BOUNDS and the quadratic section may be absent. Lines starting with '*'
/// are comments; data lines are indented, section headers are not.
/// Throws std::runtime_error naming the offending line.
inline QpsDocument parse_qps(const std::string& text) {
  enum Section { None, Name, Rows, Columns, Rhs, Ranges, Bounds, Quad, End };
  static const std::map<std::string, Section> kHeaders = {
      {"NAME", Name},     {"ROWS", Rows},     {"COLUMNS", Columns},
      {"RHS", Rhs},       {"RANGES", Ranges}, {"BOUNDS", Bounds},
      {"QUADOBJ", Quad},  {"QMATRIX", Quad},  {"ENDATA", End},
  };

  QpsDocument doc;
  std::unordered_map<std::string, char> row_types;
  std::unordered_map<std::string, int> col_seen;
  Section section = None;

  std::istringstream stream(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(stream, raw)) {
    line_no++;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty() || raw[0] == '*') continue;

    const bool header = raw[0] != ' ' && raw[0] != '\t';
    auto tokens = detail::qps_tokens(raw);
    if (tokens.empty()) continue;

    if (header) {
      const auto it = kHeaders.find(tokens[0]);
      if (it == kHeaders.end()) detail::qps_fail(line_no, "unknown section '" + tokens[0] + "'");
      if (it->second <= section)
        detail::qps_fail(line_no, "section " + tokens[0] + " out of order");
      if (it->second > Name && section < Name)
        detail::qps_fail(line_no, "missing NAME section");
      if (it->second > Rows && section < Rows) detail::qps_fail(line_no, "missing ROWS section");
      if (it->second > Columns && section < Columns)
        detail::qps_fail(line_no, "missing COLUMNS section");
      if (it->second > Rhs && section < Rhs) detail::qps_fail(line_no, "missing RHS section");
      section = it->second;
      if (section == Name && tokens.size() > 1) doc.name = tokens[1];
      if (section == Quad) doc.quad_full_matrix = tokens[0] == "QMATRIX";
      if (section == Columns && doc.objective_row.empty())
        detail::qps_fail(line_no, "no objective row declared");
      if (section == End) break;
      continue;
    }

    switch (section) {
      case Rows: {
        if (tokens.size() != 2 || tokens[0].size() != 1)
          detail::qps_fail(line_no, "expected row type and name");
        const char type = tokens[0][0];
        if (type != 'N' && type != 'L' && type != 'G' && type != 'E')
          detail::qps_fail(line_no, "unknown row type '" + tokens[0] + "'");
        if (row_types.count(tokens[1]))
          detail::qps_fail(line_no, "duplicate row '" + tokens[1] + "'");
        if (type == 'N') {
          if (!doc.objective_row.empty()) detail::qps_fail(line_no, "duplicate objective row");
          doc.objective_row = tokens[1];
        }
        row_types.emplace(tokens[1], type);
        doc.rows.push_back({type, tokens[1]});
        break;
      }
      case Columns: {
        if (tokens.size() < 3 || tokens.size() % 2 == 0)
          detail::qps_fail(line_no, "expected column name and row/value pairs");
        if (tokens[1] == "'MARKER'")
          detail::qps_fail(line_no, "integer markers are not supported");
        col_seen.emplace(tokens[0], line_no);
        for (std::size_t k = 1; k + 1 < tokens.size(); k += 2) {
          if (!row_types.count(tokens[k]))
            detail::qps_fail(line_no, "undeclared row '" + tokens[k] + "'");
          doc.columns.push_back({tokens[0], tokens[k], detail::qps_number(tokens[k + 1], line_no)});
        }
        break;
      }
      case Rhs:
      case Ranges: {
        // an odd token count means a set name leads the line
        std::size_t k = tokens.size() % 2 == 1 ? 1 : 0;
        if (tokens.size() < k + 2) detail::qps_fail(line_no, "expected row/value pairs");
        for (; k + 1 < tokens.size(); k += 2) {
          if (!row_types.count(tokens[k]))
            detail::qps_fail(line_no, "undeclared row '" + tokens[k] + "'");
          const double v = detail::qps_number(tokens[k + 1], line_no);
          if (section == Rhs) {
            doc.rhs.push_back({tokens[k], v});
          } else {
            if (tokens[k] == doc.objective_row)
              detail::qps_fail(line_no, "range on the objective row");
            doc.ranges.push_back({tokens[k], v});
          }
        }
        break;
      }
      case Bounds: {
        const std::string& type = tokens[0];
        const bool has_value = type == "UP" || type == "LO" || type == "FX";
        const bool no_value = type == "FR" || type == "MI" || type == "PL";
        if (!has_value && !no_value)
          detail::qps_fail(line_no, "unsupported bound type '" + type + "'");
        const std::size_t expect = has_value ? 3 : 2;
        // a set name is present when one extra token appears
        std::size_t k = 1;
        if (tokens.size() == expect + 1) {
          k = 2;
        } else if (tokens.size() != expect) {
          detail::qps_fail(line_no, "malformed bound line");
        }
        if (!col_seen.count(tokens[k]))
          detail::qps_fail(line_no, "undeclared column '" + tokens[k] + "'");
        doc.bounds.push_back(
            {type, tokens[k], has_value ? detail::qps_number(tokens[k + 1], line_no) : 0.0});
        break;
      }
      case Quad: {
        if (tokens.size() != 3) detail::qps_fail(line_no, "expected two columns and a value");
        if (!col_seen.count(tokens[0]))
          detail::qps_fail(line_no, "undeclared column '" + tokens[0] + "'");
        if (!col_seen.count(tokens[1]))
          detail::qps_fail(line_no, "undeclared column '" + tokens[1] + "'");
        doc.quad.push_back({tokens[0], tokens[1], detail::qps_number(tokens[2], line_no)});
        break;
      }
      case Name:
        detail::qps_fail(line_no, "unexpected data after NAME");
      default:
        detail::qps_fail(line_no, "data line before any section");
    }
  }
  if (section != End) detail::qps_fail(line_no + 1, "missing ENDATA");
  return doc;
}

/// Converts a document to the solver form. Each L, G or E row becomes one
/// row of A; finite variable bounds are appended as identity rows after the
/// linear rows, so a default-bounded variable contributes a [0, inf) row and
/// a free variable contributes none. An RHS entry on the objective row
/// shifts the optimal value only, so it is dropped here.
/// Throws std::runtime_error on inconsistent bounds.
inline QpProblem to_qp(const QpsDocument& doc) {
  std::vector<std::string> col_names;
  std::unordered_map<std::string, Index> col_index;
  for (const auto& e : doc.columns) {
    if (col_index.emplace(e.col, static_cast<Index>(col_names.size())).second)
      col_names.push_back(e.col);
  }
  const Index n = static_cast<Index>(col_names.size());
  if (n == 0) throw std::runtime_error("qps: no variables");

  std::vector<std::string> row_names;
  std::unordered_map<std::string, Index> row_index;
  std::string row_kinds;
  for (const auto& r : doc.rows) {
    if (r.type == 'N') continue;
    row_index.emplace(r.name, static_cast<Index>(row_names.size()));
    row_names.push_back(r.name);
    row_kinds.push_back(r.type);
  }
  const Index m_linear = static_cast<Index>(row_names.size());

  std::vector<double> q(n, 0.0);
  std::vector<Triplet> a_entries;
  for (const auto& e : doc.columns) {
    const Index j = col_index.at(e.col);
    if (e.row == doc.objective_row) {
      q[j] += e.value;
    } else {
      a_entries.push_back({row_index.at(e.row), j, e.value});
    }
  }

  std::vector<double> rhs(m_linear, 0.0);
  for (const auto& e : doc.rhs) {
    if (e.row == doc.objective_row) continue;
    rhs[row_index.at(e.row)] = e.value;
  }

  std::vector<double> l(m_linear), u(m_linear);
  for (Index i = 0; i < m_linear; ++i) {
    switch (row_kinds[i]) {
      case 'L': l[i] = -kInf, u[i] = rhs[i]; break;
      case 'G': l[i] = rhs[i], u[i] = kInf; break;
      default: l[i] = u[i] = rhs[i]; break;
    }
  }
  for (const auto& e : doc.ranges) {
    const Index i = row_index.at(e.row);
    const double b = rhs[i];
    const double r = e.value;
    switch (row_kinds[i]) {
      case 'L': l[i] = b - std::abs(r); break;
      case 'G': u[i] = b + std::abs(r); break;
      default:
        // an E row widens toward the sign of the range value
        l[i] = r < 0 ? b + r : b;
        u[i] = r < 0 ? b : b + r;
        break;
    }
  }

  std::vector<double> lo(n, 0.0), up(n, kInf);
  for (const auto& e : doc.bounds) {
    const Index j = col_index.at(e.col);
    if (e.type == "UP") {
      up[j] = e.value;
    } else if (e.type == "LO") {
      lo[j] = e.value;
    } else if (e.type == "FX") {
      lo[j] = up[j] = e.value;
    } else if (e.type == "FR") {
      lo[j] = -kInf, up[j] = kInf;
    } else if (e.type == "MI") {
      lo[j] = -kInf;
    } else {
      up[j] = kInf;
    }
  }

  QpProblem qp;
  qp.name = doc.name;
  qp.q = std::move(q);
  qp.l = std::move(l);
  qp.u = std::move(u);
  Index m = m_linear;
  for (Index j = 0; j < n; ++j) {
    if (lo[j] == -kInf && up[j] == kInf) continue;
    if (lo[j] > up[j])
      throw std::runtime_error("qps: inconsistent bounds for column '" + col_names[j] + "'");
    a_entries.push_back({m, j, 1.0});
    qp.l.push_back(lo[j]);
    qp.u.push_back(up[j]);
    m++;
  }
  qp.a = SparseMatrixCsc::from_triplets(m, n, std::move(a_entries));

  std::vector<Triplet> p_entries;
  for (const auto& e : doc.quad) {
    Index r = col_index.at(e.col1);
    Index c = col_index.at(e.col2);
    if (r > c) {
      // the full-matrix section repeats off-diagonal entries, keep one copy
      if (doc.quad_full_matrix) continue;
      std::swap(r, c);
    }
    p_entries.push_back({r, c, e.value});
  }
  qp.p = SparseMatrixCsc::from_triplets(n, n, std::move(p_entries));
  qp.validate();
  return qp;
}

/// Writes a problem as a QPS document that converts back to it. Every
/// variable is declared free, keeping the bounds in the constraint rows
/// exactly where the input had them. Two-sided inequality rows are written
/// as an L row plus a RANGES entry. Throws std::invalid_argument when a row
/// has no finite bound, since such a row has no MPS encoding.
inline std::string write_qps(const QpProblem& qp) {
  qp.validate();
  const Index n = qp.num_vars();
  const Index m = qp.num_constraints();
  const double huge = 1e30;  // beyond this a bound counts as infinite

  auto row_name = [](Index i) { return "R" + std::to_string(i + 1); };
  auto col_name = [](Index j) { return "X" + std::to_string(j + 1); };
  auto pad = [](std::string s) {
    while (s.size() < 10) s.push_back(' ');
    return s;
  };

  std::string out = "NAME          ";
  for (char c : qp.name.empty() ? std::string("RLQP") : qp.name)
    out.push_back(c == ' ' || c == '\t' ? '_' : c);
  out += "\nROWS\n N  OBJ\n";

  std::string kinds(m, 'L');
  for (Index i = 0; i < m; ++i) {
    const bool lo = qp.l[i] > -huge;
    const bool up = qp.u[i] < huge;
    if (!lo && !up)
      throw std::invalid_argument("write_qps: row " + std::to_string(i) +
                                  " has no finite bound");
    kinds[i] = lo && up ? (qp.l[i] == qp.u[i] ? 'E' : 'L') : (lo ? 'G' : 'L');
    out += " ";
    out.push_back(kinds[i]);
    out += "  " + row_name(i) + "\n";
  }

  out += "COLUMNS\n";
  for (Index j = 0; j < n; ++j) {
    // the objective entry doubles as the column declaration
    out += "    " + pad(col_name(j)) + pad("OBJ");
    detail::qps_format(out, qp.q[j]);
    out += "\n";
    for (Index p = qp.a.col_ptr[j]; p < qp.a.col_ptr[j + 1]; ++p) {
      out += "    " + pad(col_name(j)) + pad(row_name(qp.a.row_idx[p]));
      detail::qps_format(out, qp.a.values[p]);
      out += "\n";
    }
  }

  out += "RHS\n";
  for (Index i = 0; i < m; ++i) {
    out += "    " + pad("RHS") + pad(row_name(i));
    detail::qps_format(out, kinds[i] == 'G' ? qp.l[i] : qp.u[i]);
    out += "\n";
  }

  std::string ranges;
  for (Index i = 0; i < m; ++i) {
    if (kinds[i] != 'L' || qp.l[i] <= -huge) continue;
    ranges += "    " + pad("RNG") + pad(row_name(i));
    detail::qps_format(ranges, qp.u[i] - qp.l[i]);
    ranges += "\n";
  }
  if (!ranges.empty()) out += "RANGES\n" + ranges;

  out += "BOUNDS\n";
  for (Index j = 0; j < n; ++j) out += " FR " + pad("BND") + col_name(j) + "\n";

  if (qp.p.nnz() > 0) {
    out += "QUADOBJ\n";
    for (Index c = 0; c < n; ++c) {
      for (Index p = qp.p.col_ptr[c]; p < qp.p.col_ptr[c + 1]; ++p) {
        out += "    " + pad(col_name(qp.p.row_idx[p])) + pad(col_name(c));
        detail::qps_format(out, qp.p.values[p]);
        out += "\n";
      }
    }
  }
  out += "ENDATA\n";
  return out;
}

}  // namespace rlqp
