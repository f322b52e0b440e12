// SPDX-License-Identifier: Apache-2.0
//
// Strict CIF subset: a single data block, cell parameters as scalar tags, and
// one _atom_site_ loop carrying type symbols and fractional coordinates.
// Symmetry information is not expanded; every listed site is taken as-is (P1).

#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "crystal_evolve/elements.hpp"
#include "crystal_evolve/error.hpp"
#include "crystal_evolve/structure.hpp"

namespace crystal_evolve {

namespace cif_detail {

struct Token {
  std::string text;
  int line = 0;
  bool quoted = false;  // quoted strings and text fields are never keywords
};

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

inline bool is_space(char ch) { return ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n'; }

inline std::string at_line(int line) { return "line " + std::to_string(line) + ": "; }

inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start <= text.size();) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }

  for (std::size_t li = 0; li < lines.size(); ++li) {
    const int lineno = static_cast<int>(li) + 1;
    std::string_view line = lines[li];
    if (!line.empty() && line[0] == ';') {
      // Multi-line text field runs until a line beginning with ';'.
      std::string field(line.substr(1));
      std::size_t end = li + 1;
      while (end < lines.size() && (lines[end].empty() || lines[end][0] != ';')) {
        field += '\n';
        field += lines[end];
        ++end;
      }
      if (end >= lines.size())
        throw Error(Errc::MalformedDocument, at_line(lineno) + "unterminated text field");
      tokens.push_back({field, lineno, true});
      li = end;  // the closing ';' line carries nothing else we read
      continue;
    }
    std::size_t i = 0;
    while (i < line.size()) {
      if (is_space(line[i])) {
        ++i;
        continue;
      }
      if (line[i] == '#') break;
      if (line[i] == '\'' || line[i] == '"') {
        const char q = line[i];
        std::size_t j = i + 1;
        // A quote closes only when followed by whitespace or end of line.
        while (j < line.size() && !(line[j] == q && (j + 1 == line.size() || is_space(line[j + 1])))) ++j;
        if (j >= line.size())
          throw Error(Errc::MalformedDocument, at_line(lineno) + "unterminated quoted string");
        tokens.push_back({std::string(line.substr(i + 1, j - i - 1)), lineno, true});
        i = j + 1;
        continue;
      }
      std::size_t j = i;
      while (j < line.size() && !is_space(line[j])) ++j;
      tokens.push_back({std::string(line.substr(i, j - i)), lineno, false});
      i = j;
    }
  }
  return tokens;
}

inline bool is_tag(const Token& t) { return !t.quoted && !t.text.empty() && t.text[0] == '_'; }

inline bool is_reserved(const Token& t) {
  if (t.quoted) return false;
  const std::string l = lower(t.text);
  return l == "loop_" || l.rfind("data_", 0) == 0 || l.rfind("save_", 0) == 0 || l == "global_" ||
         l == "stop_";
}

/// Number with optional standard uncertainty suffix, e.g. "5.4307(2)".
inline double parse_number(const Token& t, std::string_view what) {
  std::string_view s = t.text;
  if (auto paren = s.find('('); paren != std::string_view::npos) {
    if (s.back() != ')' || paren + 2 >= s.size())
      throw Error(Errc::MalformedNumber, at_line(t.line) + "bad " + std::string(what) + " '" + t.text + "'");
    for (std::size_t k = paren + 1; k + 1 < s.size(); ++k)
      if (!std::isdigit(static_cast<unsigned char>(s[k])))
        throw Error(Errc::MalformedNumber, at_line(t.line) + "bad " + std::string(what) + " '" + t.text + "'");
    s = s.substr(0, paren);
  }
  double value = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (s.empty() || ec != std::errc() || ptr != last || !std::isfinite(value))
    throw Error(Errc::MalformedNumber, at_line(t.line) + "bad " + std::string(what) + " '" + t.text + "'");
  return value;
}

struct Loop {
  std::vector<Token> tags;
  std::vector<Token> values;
  int line = 0;
};

}  // namespace cif_detail

/// Parse one CIF document. Non-fatal notes (ignored symmetry tags) are
/// appended to `warnings` when given.
inline CrystalStructure parse_cif(std::string_view text, std::vector<std::string>* warnings = nullptr) {
  using namespace cif_detail;
  const std::vector<Token> tokens = tokenize(text);

  std::optional<Token> block;
  std::vector<std::pair<Token, Token>> items;  // (tag, value)
  std::vector<Loop> loops;
  bool warned_symmetry = false;
  auto note_tag = [&](const Token& tag) {
    const std::string l = lower(tag.text);
    if (!warned_symmetry && (l.rfind("_symmetry_", 0) == 0 || l.rfind("_space_group_", 0) == 0)) {
      warned_symmetry = true;
      if (warnings)
        warnings->push_back(at_line(tag.line) + "symmetry tags ignored; sites are taken literally (P1)");
    }
  };

  for (std::size_t i = 0; i < tokens.size();) {
    const Token& t = tokens[i];
    const std::string l = t.quoted ? std::string() : lower(t.text);
    if (!t.quoted && l.rfind("data_", 0) == 0) {
      if (block) throw Error(Errc::MalformedDocument, at_line(t.line) + "more than one data block");
      block = t;
      ++i;
      continue;
    }
    if (!block) throw Error(Errc::MalformedDocument, at_line(t.line) + "content before the data block");
    if (l == "loop_") {
      Loop loop;
      loop.line = t.line;
      ++i;
      while (i < tokens.size() && is_tag(tokens[i])) {
        note_tag(tokens[i]);
        loop.tags.push_back(tokens[i++]);
      }
      if (loop.tags.empty()) throw Error(Errc::MalformedDocument, at_line(t.line) + "loop_ without tags");
      while (i < tokens.size() && !is_tag(tokens[i]) && !is_reserved(tokens[i])) loop.values.push_back(tokens[i++]);
      if (loop.values.size() % loop.tags.size() != 0)
        throw Error(Errc::MalformedDocument,
                    at_line(loop.line) + "loop value count is not a multiple of its column count");
      loops.push_back(std::move(loop));
      continue;
    }
    if (is_tag(t)) {
      note_tag(t);
      if (i + 1 >= tokens.size() || is_tag(tokens[i + 1]) || is_reserved(tokens[i + 1]))
        throw Error(Errc::MalformedDocument, at_line(t.line) + "tag " + t.text + " has no value");
      items.emplace_back(t, tokens[i + 1]);
      i += 2;
      continue;
    }
    if (is_reserved(t)) throw Error(Errc::MalformedDocument, at_line(t.line) + "unsupported keyword '" + t.text + "'");
    throw Error(Errc::MalformedDocument, at_line(t.line) + "stray value '" + t.text + "'");
  }
  if (!block) throw Error(Errc::MalformedDocument, "line 1: no data block");

  CrystalStructure s;
  s.id = block->text.substr(5);

  auto find_item = [&](std::string_view tag) -> const std::pair<Token, Token>* {
    for (const auto& item : items)
      if (lower(item.first.text) == tag) return &item;
    return nullptr;
  };
  struct CellTag {
    std::string_view tag;
    double* slot;
  };
  const CellTag cell_tags[] = {{"_cell_length_a", &s.cell.a},        {"_cell_length_b", &s.cell.b},
                               {"_cell_length_c", &s.cell.c},        {"_cell_angle_alpha", &s.cell.alpha},
                               {"_cell_angle_beta", &s.cell.beta},   {"_cell_angle_gamma", &s.cell.gamma}};
  for (const auto& [tag, slot] : cell_tags) {
    const auto* item = find_item(tag);
    if (!item)
      throw Error(Errc::MissingTag, at_line(block->line) + "data block '" + s.id + "' lacks " + std::string(tag));
    *slot = parse_number(item->second, tag);
    const bool is_length = tag.find("length") != std::string_view::npos;
    if (is_length ? !(*slot > 0.0) : !(*slot > 0.0 && *slot < 180.0))
      throw Error(Errc::InvalidStructure, at_line(item->second.line) + std::string(tag) + " out of range");
  }
  if (!(cell_volume_radicand(s.cell) > 0.0))
    throw Error(Errc::InvalidStructure,
                at_line(find_item("_cell_angle_alpha")->second.line) + "cell angles are not geometrically realizable");

  const Loop* atoms = nullptr;
  for (const auto& loop : loops)
    for (const auto& tag : loop.tags)
      if (lower(tag.text) == "_atom_site_fract_x") atoms = &loop;
  if (!atoms) {
    for (const auto& loop : loops)
      for (const auto& tag : loop.tags)
        if (lower(tag.text).rfind("_atom_site_", 0) == 0 && lower(tag.text).rfind("_atom_site_aniso", 0) != 0)
          throw Error(Errc::MissingTag, at_line(loop.line) + "atom site loop lacks _atom_site_fract_x");
    throw Error(Errc::MissingTag, at_line(block->line) + "no _atom_site_ loop with _atom_site_fract_x");
  }
  auto column = [&](std::string_view tag) -> std::optional<std::size_t> {
    for (std::size_t k = 0; k < atoms->tags.size(); ++k)
      if (lower(atoms->tags[k].text) == tag) return k;
    return std::nullopt;
  };
  const auto col_sym = column("_atom_site_type_symbol");
  const auto col_x = column("_atom_site_fract_x");
  const auto col_y = column("_atom_site_fract_y");
  const auto col_z = column("_atom_site_fract_z");
  if (!col_sym) throw Error(Errc::MissingTag, at_line(atoms->line) + "atom site loop lacks _atom_site_type_symbol");
  if (!col_y) throw Error(Errc::MissingTag, at_line(atoms->line) + "atom site loop lacks _atom_site_fract_y");
  if (!col_z) throw Error(Errc::MissingTag, at_line(atoms->line) + "atom site loop lacks _atom_site_fract_z");

  const std::size_t ncols = atoms->tags.size();
  const std::size_t nrows = atoms->values.size() / ncols;
  if (nrows == 0) throw Error(Errc::EmptyAtomLoop, at_line(atoms->line) + "atom site loop has no rows");
  s.sites.reserve(nrows);
  for (std::size_t r = 0; r < nrows; ++r) {
    const Token* row = &atoms->values[r * ncols];
    const Token& sym = row[*col_sym];
    const auto z = atomic_number_from_type_symbol(sym.text);
    if (!z) throw Error(Errc::UnknownElement, at_line(sym.line) + "unknown element '" + sym.text + "'");
    AtomSite site;
    site.element = *z;
    site.fx = wrap_fraction(parse_number(row[*col_x], "_atom_site_fract_x"));
    site.fy = wrap_fraction(parse_number(row[*col_y], "_atom_site_fract_y"));
    site.fz = wrap_fraction(parse_number(row[*col_z], "_atom_site_fract_z"));
    s.sites.push_back(site);
  }
  return s;
}

namespace cif_detail {
inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace cif_detail

/// Canonical CIF text: 6-decimal numbers, sites in input order.
inline std::string write_cif(const CrystalStructure& s) {
  using cif_detail::fixed6;
  std::string id = s.id.empty() ? std::string("unnamed") : s.id;
  std::replace_if(id.begin(), id.end(), [](char ch) { return cif_detail::is_space(ch); }, '_');

  std::ostringstream out;
  out << "data_" << id << '\n';
  auto tag = [&](std::string_view name, double v) {
    std::string padded(name);
    padded.resize(std::max<std::size_t>(18, name.size() + 1), ' ');
    out << padded << fixed6(v) << '\n';
  };
  tag("_cell_length_a", s.cell.a);
  tag("_cell_length_b", s.cell.b);
  tag("_cell_length_c", s.cell.c);
  tag("_cell_angle_alpha", s.cell.alpha);
  tag("_cell_angle_beta", s.cell.beta);
  tag("_cell_angle_gamma", s.cell.gamma);
  out << "loop_\n"
         "_atom_site_label\n"
         "_atom_site_type_symbol\n"
         "_atom_site_fract_x\n"
         "_atom_site_fract_y\n"
         "_atom_site_fract_z\n";
  for (std::size_t i = 0; i < s.sites.size(); ++i) {
    const auto& site = s.sites[i];
    const std::string sym(element_symbol(site.element));
    out << sym << (i + 1) << ' ' << sym << ' ' << fixed6(site.fx) << ' ' << fixed6(site.fy) << ' '
        << fixed6(site.fz) << '\n';
  }
  return out.str();
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::FileNotFound, path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Parse a CIF file; errors are tagged with the source path.
inline CrystalStructure read_cif_file(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  const std::string text = read_text_file(path);
  try {
    return parse_cif(text, warnings);
  } catch (const Error& e) {
    rethrow_with_context(e, path);
  }
}

}  // namespace crystal_evolve
