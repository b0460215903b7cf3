#pragma once

#include <string>
#include <vector>

#include "secmlops/ledger.hpp"

namespace ledger_fixture {

inline secmlops::ledger::LedgerPayload payload(int n, bool pass = true, double eps_at = 0.02) {
  secmlops::ledger::LedgerPayload p;
  p.model_id = "model-" + std::to_string(n);
  if (n > 0) p.parent_model_id = "model-" + std::to_string(n - 1);
  p.dataset_digest = secmlops::sha256_hex("dataset");
  p.config_digest = secmlops::sha256_hex("config");
  p.model_digest = secmlops::sha256_hex("model" + std::to_string(n));
  p.report_digest = secmlops::sha256_hex("report" + std::to_string(n));
  if (eps_at > 0) p.provenance.stack.adversarial_training = secmlops::attacks::PgdSpec{eps_at, 0.01, 3};
  p.gate_verdict = pass ? "pass" : "fail";
  if (!pass) p.gate_reasons = {"fgsm(eps=0.03) ratio 0.715 < 0.8"};
  p.approvals = {"R3", "R8"};
  p.timestamp = "2026-01-01T00:00:00Z";
  return p;
}

inline std::vector<std::uint8_t> key(std::uint8_t fill = 0x42) { return std::vector<std::uint8_t>(32, fill); }

}  // namespace ledger_fixture
