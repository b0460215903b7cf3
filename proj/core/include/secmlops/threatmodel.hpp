#pragma once

// STRIDE likelihood x impact matrix: loading, validation, ordinal risk
// scores, prioritization, and CSV / markdown rendering.

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace secmlops::threatmodel {

enum class ElementKind { kExternalEntity, kProcess, kDataFlow, kDataStore };
enum class Likelihood { kNone, kLow, kMedium, kHigh };  // N, L, M, H
enum class Impact { kLow, kMedium, kHigh };

inline constexpr std::array<char, 6> kThreats{'S', 'T', 'R', 'I', 'D', 'E'};

std::string_view to_string(ElementKind k);  // ExternalEntity, ...
std::string_view id_prefix(ElementKind k);  // EE, P, DF, DS
char to_letter(Likelihood l);
std::string_view to_string(Impact i);  // Low, Medium, High
ElementKind parse_kind(std::string_view s);
Likelihood parse_likelihood(std::string_view s);
Impact parse_impact(std::string_view s);

struct Element {
  std::string id;  // EE-1, P-3, DF-5, DS-2
  ElementKind kind = ElementKind::kProcess;
  std::string description;
  bool operator==(const Element&) const = default;
};

struct ThreatCell {
  std::string element;
  char threat = 'S';
  Likelihood likelihood = Likelihood::kNone;
  Impact impact = Impact::kLow;
  bool operator==(const ThreatCell&) const = default;
};

struct ThreatMatrix {
  std::vector<Element> elements;  // row order
  std::vector<ThreatCell> cells;  // row-major, threats in STRIDE order
  std::map<std::string, std::string> metadata;

  const ThreatCell& cell(std::string_view element, char threat) const;
  bool operator==(const ThreatMatrix&) const = default;
};

// Rebuilds a complete grid from unordered cells: elements keep first
// appearance order, cells are sorted into STRIDE order. Throws
// Error(kDuplicateCell), Error(kMissingCell), Error(kUnknownId).
ThreatMatrix make_matrix(std::vector<Element> elements, const std::vector<ThreatCell>& cells);

// CSV with header element,kind,threat,likelihood,impact.
ThreatMatrix parse_csv(std::string_view text);
ThreatMatrix load(const std::filesystem::path& file);
// The bundled matrix for the vision-language pedestrian detector system.
ThreatMatrix vlpd_matrix();
std::string_view vlpd_csv();

int likelihood_weight(Likelihood l);  // N0 L1 M2 H3
int impact_weight(Impact i);          // Low1 Medium2 High3
int risk_score(const ThreatCell& cell);

// Score desc, then element id, then threat letter.
std::vector<ThreatCell> prioritize(const ThreatMatrix& matrix);

enum class Format { kCsv, kMarkdown };
std::string render(const ThreatMatrix& matrix, Format format);

}  // namespace secmlops::threatmodel
