#include "secmlops/threatmodel.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "secmlops/error.hpp"
#include "vlpd_stride_data.hpp"

namespace secmlops::threatmodel {

namespace {

constexpr std::string_view kHeader = "element,kind,threat,likelihood,impact";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

int threat_position(char t) {
  const auto it = std::find(kThreats.begin(), kThreats.end(), t);
  if (it == kThreats.end()) throw Error(ErrorKind::kFormat, std::string("unknown STRIDE threat '") + t + "'");
  return static_cast<int>(it - kThreats.begin());
}

void check_id(const Element& e) {
  const std::string prefix = std::string(id_prefix(e.kind)) + "-";
  if (e.id.size() <= prefix.size() || e.id.compare(0, prefix.size(), prefix) != 0 ||
      !std::all_of(e.id.begin() + static_cast<std::ptrdiff_t>(prefix.size()), e.id.end(),
                   [](char c) { return c >= '0' && c <= '9'; }))
    throw Error(ErrorKind::kUnknownId, "element id '" + e.id + "' does not match kind " + std::string(to_string(e.kind)));
}

}  // namespace

std::string_view to_string(ElementKind k) {
  switch (k) {
    case ElementKind::kExternalEntity: return "ExternalEntity";
    case ElementKind::kProcess: return "Process";
    case ElementKind::kDataFlow: return "DataFlow";
    case ElementKind::kDataStore: return "DataStore";
  }
  return "Process";
}

std::string_view id_prefix(ElementKind k) {
  switch (k) {
    case ElementKind::kExternalEntity: return "EE";
    case ElementKind::kProcess: return "P";
    case ElementKind::kDataFlow: return "DF";
    case ElementKind::kDataStore: return "DS";
  }
  return "P";
}

char to_letter(Likelihood l) {
  switch (l) {
    case Likelihood::kNone: return 'N';
    case Likelihood::kLow: return 'L';
    case Likelihood::kMedium: return 'M';
    case Likelihood::kHigh: return 'H';
  }
  return 'N';
}

std::string_view to_string(Impact i) {
  switch (i) {
    case Impact::kLow: return "Low";
    case Impact::kMedium: return "Medium";
    case Impact::kHigh: return "High";
  }
  return "Low";
}

ElementKind parse_kind(std::string_view s) {
  for (auto k : {ElementKind::kExternalEntity, ElementKind::kProcess, ElementKind::kDataFlow, ElementKind::kDataStore})
    if (to_string(k) == s) return k;
  throw Error(ErrorKind::kFormat, "unknown element kind '" + std::string(s) + "'");
}

Likelihood parse_likelihood(std::string_view s) {
  for (auto l : {Likelihood::kNone, Likelihood::kLow, Likelihood::kMedium, Likelihood::kHigh})
    if (s.size() == 1 && s[0] == to_letter(l)) return l;
  throw Error(ErrorKind::kFormat, "unknown likelihood '" + std::string(s) + "'");
}

Impact parse_impact(std::string_view s) {
  for (auto i : {Impact::kLow, Impact::kMedium, Impact::kHigh})
    if (to_string(i) == s) return i;
  throw Error(ErrorKind::kFormat, "unknown impact '" + std::string(s) + "'");
}

const ThreatCell& ThreatMatrix::cell(std::string_view element, char threat) const {
  for (std::size_t e = 0; e < elements.size(); ++e)
    if (elements[e].id == element) return cells.at(e * kThreats.size() + static_cast<std::size_t>(threat_position(threat)));
  throw Error(ErrorKind::kUnknownId, "no element '" + std::string(element) + "'");
}

ThreatMatrix make_matrix(std::vector<Element> elements, const std::vector<ThreatCell>& cells) {
  ThreatMatrix m;
  std::set<std::string> ids;
  for (auto& e : elements) {
    check_id(e);
    if (!ids.insert(e.id).second) throw Error(ErrorKind::kDuplicateCell, "element '" + e.id + "' listed twice");
  }
  m.elements = std::move(elements);
  std::vector<std::optional<ThreatCell>> grid(m.elements.size() * kThreats.size());
  for (const auto& c : cells) {
    const auto it = std::find_if(m.elements.begin(), m.elements.end(), [&](const Element& e) { return e.id == c.element; });
    if (it == m.elements.end()) throw Error(ErrorKind::kUnknownId, "cell names unknown element '" + c.element + "'");
    auto& slot = grid[static_cast<std::size_t>(it - m.elements.begin()) * kThreats.size() +
                      static_cast<std::size_t>(threat_position(c.threat))];
    if (slot) throw Error(ErrorKind::kDuplicateCell, "duplicate cell (" + c.element + ", " + c.threat + ")");
    slot = c;
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!grid[i])
      throw Error(ErrorKind::kMissingCell, "missing cell (" + m.elements[i / kThreats.size()].id + ", " +
                                               kThreats[i % kThreats.size()] + ")");
    m.cells.push_back(*grid[i]);
  }
  return m;
}

ThreatMatrix parse_csv(std::string_view text) {
  std::map<std::string, std::string> metadata;
  std::vector<Element> elements;
  std::vector<ThreatCell> cells;
  bool header_seen = false;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (!header_seen && line[0] == '#') {
      const auto colon = line.find(':');
      if (colon == std::string::npos) throw Error(ErrorKind::kFormat, "metadata line without ':'");
      metadata[trim(std::string_view(line).substr(1, colon - 1))] = trim(std::string_view(line).substr(colon + 1));
      continue;
    }
    if (!header_seen) {
      if (line != kHeader) throw Error(ErrorKind::kFormat, "expected header '" + std::string(kHeader) + "'");
      header_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 5) throw Error(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": expected 5 fields");
    const ElementKind kind = parse_kind(f[1]);
    const auto it = std::find_if(elements.begin(), elements.end(), [&](const Element& e) { return e.id == f[0]; });
    if (it == elements.end()) {
      elements.push_back({f[0], kind, {}});
      check_id(elements.back());
    } else if (it->kind != kind) {
      throw Error(ErrorKind::kFormat, "element '" + f[0] + "' listed with two kinds");
    }
    if (f[2].size() != 1) throw Error(ErrorKind::kFormat, "threat must be one letter");
    cells.push_back({f[0], f[2][0], parse_likelihood(f[3]), parse_impact(f[4])});
  }
  if (!header_seen) throw Error(ErrorKind::kFormat, "threat matrix has no header");
  ThreatMatrix m = make_matrix(std::move(elements), cells);
  m.metadata = std::move(metadata);
  return m;
}

ThreatMatrix load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

std::string_view vlpd_csv() { return kVlpdStrideCsv; }

ThreatMatrix vlpd_matrix() { return parse_csv(vlpd_csv()); }

int likelihood_weight(Likelihood l) {
  switch (l) {
    case Likelihood::kNone: return 0;
    case Likelihood::kLow: return 1;
    case Likelihood::kMedium: return 2;
    case Likelihood::kHigh: return 3;
  }
  return 0;
}

int impact_weight(Impact i) {
  switch (i) {
    case Impact::kLow: return 1;
    case Impact::kMedium: return 2;
    case Impact::kHigh: return 3;
  }
  return 1;
}

int risk_score(const ThreatCell& cell) { return likelihood_weight(cell.likelihood) * impact_weight(cell.impact); }

std::vector<ThreatCell> prioritize(const ThreatMatrix& matrix) {
  std::vector<ThreatCell> out = matrix.cells;
  std::sort(out.begin(), out.end(), [](const ThreatCell& a, const ThreatCell& b) {
    const int sa = risk_score(a), sb = risk_score(b);
    if (sa != sb) return sa > sb;
    if (a.element != b.element) return a.element < b.element;
    return a.threat < b.threat;
  });
  return out;
}

std::string render(const ThreatMatrix& matrix, Format format) {
  std::ostringstream out;
  if (format == Format::kCsv) {
    for (const auto& [k, v] : matrix.metadata) out << "# " << k << ": " << v << '\n';
    out << kHeader << '\n';
    for (const auto& c : matrix.cells) {
      const auto& e = *std::find_if(matrix.elements.begin(), matrix.elements.end(),
                                    [&](const Element& x) { return x.id == c.element; });
      out << c.element << ',' << to_string(e.kind) << ',' << c.threat << ',' << to_letter(c.likelihood) << ','
          << to_string(c.impact) << '\n';
    }
    return out.str();
  }
  out << "| Element |";
  for (char t : kThreats) out << ' ' << t << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < kThreats.size(); ++i) out << "---|";
  out << '\n';
  for (std::size_t e = 0; e < matrix.elements.size(); ++e) {
    out << "| " << matrix.elements[e].id << " |";
    for (std::size_t t = 0; t < kThreats.size(); ++t) {
      const auto& c = matrix.cells[e * kThreats.size() + t];
      out << ' ' << to_letter(c.likelihood) << " (" << to_string(c.impact) << ", " << risk_score(c) << ") |";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace secmlops::threatmodel
