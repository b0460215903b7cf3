#pragma once

// Append-only model lineage ledger. One JSON object per line:
//   {"mac": hex, "payload": {...}, "prev_hash": hex, "record_hash": hex}
// record_hash = SHA-256(prev_hash bytes || canonical payload), where the
// canonical payload is the compact JSON dump with sorted keys, and
// mac = HMAC-SHA-256(key, record_hash bytes). The first record chains to 32
// zero bytes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "secmlops/defenses.hpp"
#include "secmlops/digest.hpp"

namespace secmlops::ledger {

inline constexpr std::string_view kKeyEnv = "SECMLOPS_LEDGER_KEY";
inline const std::set<std::string> kRequiredApprovals{"R3", "R8"};

struct LedgerPayload {
  std::uint64_t record_index = 0;  // assigned by append
  std::string model_id;
  std::optional<std::string> parent_model_id;
  std::string dataset_digest;
  std::string config_digest;
  std::string model_digest;
  defenses::Provenance provenance;
  std::string report_digest;
  std::string gate_verdict;  // "pass" | "fail"
  std::vector<std::string> gate_reasons;
  std::set<std::string> approvals;
  std::string status;     // assigned by append: "approved" | "pending-approval" | "rejected"
  std::string timestamp;  // excluded from determinism comparisons
  std::optional<std::string> signature;  // detached signature slot, unused

  bool approvals_complete() const;
  // Gate pass with R3 and R8 approvals.
  bool deployable() const { return gate_verdict == "pass" && approvals_complete(); }
  double adversarial_epsilon() const;  // eps^AT of the provenance, 0 without AT
  bool operator==(const LedgerPayload&) const = default;
};

struct LedgerRecord {
  LedgerPayload payload;
  Digest prev_hash{};
  Digest record_hash{};
  Digest mac{};
  bool operator==(const LedgerRecord&) const = default;
};

std::string canonical_payload(const LedgerPayload& payload);
Digest record_hash(const Digest& prev_hash, std::string_view canonical_payload);
Digest record_mac(std::span<const std::uint8_t> key, const Digest& record_hash);
// The stored line, without the trailing newline.
std::string record_line(const LedgerRecord& record);

// Fills record_index, status, prev_hash, record_hash, mac. Throws
// Error(kIncompletePayload).
LedgerRecord seal(LedgerPayload payload, const Digest& prev_hash, std::uint64_t index,
                  std::span<const std::uint8_t> key);

struct VerifyResult {
  bool valid = true;
  std::optional<std::size_t> broken_at;
  std::string reason;
};

// Recomputes every hash and MAC in order. A line that does not parse, is
// not in canonical form, or carries the wrong index breaks at its position.
VerifyResult verify_lines(std::span<const std::string> lines, std::span<const std::uint8_t> key);

// Throws Error(kNoSecureVersion).
const LedgerRecord& rollback(std::span<const LedgerRecord> records);
// Largest eps^AT among deployable records, most recent on ties. Throws
// Error(kNoSecureVersion).
const LedgerRecord& safe_mode(std::span<const LedgerRecord> records);

// Ledger file with an exclusive, non-blocking writer lock on <path>.lock.
class Ledger {
 public:
  explicit Ledger(std::filesystem::path path);

  const std::filesystem::path& path() const { return path_; }
  std::vector<std::string> lines() const;
  // Throws Error(kFormat) on a malformed line.
  std::vector<LedgerRecord> records() const;
  VerifyResult verify(std::span<const std::uint8_t> key) const;
  // Appends through a temp file and rename. Throws Error(kConcurrentWriter)
  // when another writer holds the lock, Error(kIncompletePayload).
  LedgerRecord append(LedgerPayload payload, std::span<const std::uint8_t> key);

 private:
  std::filesystem::path path_;
};

// Reads the hex key from SECMLOPS_LEDGER_KEY. Throws Error(kInvalidConfig)
// when unset, empty, or not hex.
std::vector<std::uint8_t> key_from_env();

void to_json(nlohmann::json& j, const LedgerPayload& p);
void from_json(const nlohmann::json& j, LedgerPayload& p);
void to_json(nlohmann::json& j, const LedgerRecord& r);
void from_json(const nlohmann::json& j, LedgerRecord& r);

}  // namespace secmlops::ledger
