#include "secmlops/ledger.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "secmlops/error.hpp"
#include "secmlops/govern.hpp"

namespace secmlops::ledger {

namespace {

Digest digest_from_hex(const std::string& hex) {
  const auto bytes = from_hex(hex);
  if (bytes.size() != 32) throw Error(ErrorKind::kFormat, "digest is not 32 bytes");
  Digest d{};
  std::copy(bytes.begin(), bytes.end(), d.begin());
  return d;
}

std::string status_of(const LedgerPayload& p) {
  if (p.gate_verdict != "pass") return "rejected";
  return p.approvals_complete() ? "approved" : "pending-approval";
}

void check_complete(const LedgerPayload& p) {
  const std::pair<const char*, const std::string*> fields[] = {{"model_id", &p.model_id},
                                                               {"dataset_digest", &p.dataset_digest},
                                                               {"config_digest", &p.config_digest},
                                                               {"model_digest", &p.model_digest},
                                                               {"report_digest", &p.report_digest}};
  for (const auto& [name, value] : fields)
    if (value->empty()) throw Error(ErrorKind::kIncompletePayload, std::string(name) + " is empty");
  if (p.gate_verdict != "pass" && p.gate_verdict != "fail")
    throw Error(ErrorKind::kIncompletePayload, "gate_verdict must be pass or fail");
}

// Closes and unlocks on scope exit.
class WriterLock {
 public:
  explicit WriterLock(const std::filesystem::path& file) {
    fd_ = ::open(file.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorKind::kIo, "cannot open lock " + file.string() + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      const int err = errno;
      ::close(fd_);
      if (err == EWOULDBLOCK) throw Error(ErrorKind::kConcurrentWriter, "ledger is locked by another writer");
      throw Error(ErrorKind::kIo, std::string("flock failed: ") + std::strerror(err));
    }
  }
  ~WriterLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  WriterLock(const WriterLock&) = delete;
  WriterLock& operator=(const WriterLock&) = delete;

 private:
  int fd_ = -1;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string::npos) {
      out.push_back(text.substr(start));
      break;
    }
    out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

}  // namespace

bool LedgerPayload::approvals_complete() const {
  return std::includes(approvals.begin(), approvals.end(), kRequiredApprovals.begin(), kRequiredApprovals.end());
}

double LedgerPayload::adversarial_epsilon() const {
  return provenance.stack.adversarial_training ? provenance.stack.adversarial_training->epsilon : 0.0;
}

std::string canonical_payload(const LedgerPayload& payload) { return nlohmann::json(payload).dump(); }

Digest record_hash(const Digest& prev_hash, std::string_view canonical) {
  std::vector<std::uint8_t> bytes(prev_hash.begin(), prev_hash.end());
  bytes.insert(bytes.end(), canonical.begin(), canonical.end());
  return sha256(bytes);
}

Digest record_mac(std::span<const std::uint8_t> key, const Digest& hash) { return hmac_sha256(key, hash); }

std::string record_line(const LedgerRecord& record) { return nlohmann::json(record).dump(); }

LedgerRecord seal(LedgerPayload payload, const Digest& prev_hash, std::uint64_t index,
                  std::span<const std::uint8_t> key) {
  check_complete(payload);
  payload.record_index = index;
  payload.status = status_of(payload);
  if (payload.timestamp.empty()) payload.timestamp = govern::utc_timestamp();
  LedgerRecord r;
  r.payload = std::move(payload);
  r.prev_hash = prev_hash;
  r.record_hash = record_hash(prev_hash, canonical_payload(r.payload));
  r.mac = record_mac(key, r.record_hash);
  return r;
}

VerifyResult verify_lines(std::span<const std::string> lines, std::span<const std::uint8_t> key) {
  Digest prev{};
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto broken = [&](std::string reason) { return VerifyResult{false, i, std::move(reason)}; };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
      if (j.dump() != lines[i]) return broken("line is not in canonical form");
    } catch (const nlohmann::json::exception&) {
      return broken("line does not parse");
    }
    if (!j.is_object() || j.size() != 4 || !j.contains("payload") || !j.contains("prev_hash") ||
        !j.contains("record_hash") || !j.contains("mac") || !j["payload"].is_object() ||
        !j["prev_hash"].is_string() || !j["record_hash"].is_string() || !j["mac"].is_string())
      return broken("record fields are malformed");
    const auto& payload = j["payload"];
    if (!payload.contains("record_index") || !payload["record_index"].is_number_unsigned() ||
        payload["record_index"].get<std::uint64_t>() != i)
      return broken("record index does not match position");
    if (j["prev_hash"].get<std::string>() != to_hex(prev)) return broken("prev_hash does not chain");
    const Digest hash = record_hash(prev, payload.dump());
    if (j["record_hash"].get<std::string>() != to_hex(hash)) return broken("record_hash mismatch");
    if (j["mac"].get<std::string>() != to_hex(record_mac(key, hash))) return broken("mac mismatch");
    prev = hash;
  }
  return {};
}

const LedgerRecord& rollback(std::span<const LedgerRecord> records) {
  for (auto it = records.rbegin(); it != records.rend(); ++it)
    if (it->payload.deployable()) return *it;
  throw Error(ErrorKind::kNoSecureVersion, "no record passed the gate with complete approvals");
}

const LedgerRecord& safe_mode(std::span<const LedgerRecord> records) {
  const LedgerRecord* best = nullptr;
  for (const auto& r : records) {
    if (!r.payload.deployable()) continue;
    if (best == nullptr || r.payload.adversarial_epsilon() >= best->payload.adversarial_epsilon()) best = &r;
  }
  if (best == nullptr) throw Error(ErrorKind::kNoSecureVersion, "no record passed the gate with complete approvals");
  return *best;
}

Ledger::Ledger(std::filesystem::path path) : path_(std::move(path)) {}

std::vector<std::string> Ledger::lines() const { return split_lines(read_file(path_)); }

std::vector<LedgerRecord> Ledger::records() const {
  std::vector<LedgerRecord> out;
  const auto ls = lines();
  for (std::size_t i = 0; i < ls.size(); ++i) {
    try {
      out.push_back(nlohmann::json::parse(ls[i]).get<LedgerRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kFormat, "ledger line " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

VerifyResult Ledger::verify(std::span<const std::uint8_t> key) const { return verify_lines(lines(), key); }

LedgerRecord Ledger::append(LedgerPayload payload, std::span<const std::uint8_t> key) {
  check_complete(payload);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  WriterLock lock(path_.string() + ".lock");

  std::string text = read_file(path_);
  const auto existing = split_lines(text);
  Digest prev{};
  if (!existing.empty()) {
    try {
      prev = digest_from_hex(nlohmann::json::parse(existing.back()).at("record_hash").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kFormat, std::string("last ledger line is malformed: ") + e.what());
    }
  }
  LedgerRecord record = seal(std::move(payload), prev, existing.size(), key);
  if (!text.empty() && text.back() != '\n') text.push_back('\n');
  text += record_line(record);
  text.push_back('\n');

  const std::filesystem::path tmp = path_.string() + ".tmp." + std::to_string(::getpid());
  {
    const int fd = ::open(tmp.c_str(), O_CREAT | O_TRUNC | O_WRONLY | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
    std::size_t off = 0;
    while (off < text.size()) {
      const ssize_t n = ::write(fd, text.data() + off, text.size() - off);
      if (n < 0) {
        ::close(fd);
        throw Error(ErrorKind::kIo, "write failed on " + tmp.string());
      }
      off += static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
  }
  std::filesystem::rename(tmp, path_);
  return record;
}

std::vector<std::uint8_t> key_from_env() {
  const char* raw = std::getenv(std::string(kKeyEnv).c_str());
  if (raw == nullptr || *raw == '\0') throw Error(ErrorKind::kInvalidConfig, std::string(kKeyEnv) + " is not set");
  try {
    return from_hex(raw);
  } catch (const Error&) {
    throw Error(ErrorKind::kInvalidConfig, std::string(kKeyEnv) + " is not valid hex");
  }
}

void to_json(nlohmann::json& j, const LedgerPayload& p) {
  j = nlohmann::json{{"record_index", p.record_index},
                     {"model_id", p.model_id},
                     {"parent_model_id", p.parent_model_id ? nlohmann::json(*p.parent_model_id) : nlohmann::json(nullptr)},
                     {"dataset_digest", p.dataset_digest},
                     {"config_digest", p.config_digest},
                     {"model_digest", p.model_digest},
                     {"provenance", p.provenance},
                     {"report_digest", p.report_digest},
                     {"gate_verdict", p.gate_verdict},
                     {"gate_reasons", p.gate_reasons},
                     {"approvals", p.approvals},
                     {"status", p.status},
                     {"timestamp", p.timestamp},
                     {"signature", p.signature ? nlohmann::json(*p.signature) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, LedgerPayload& p) {
  p.record_index = j.value("record_index", std::uint64_t{0});
  j.at("model_id").get_to(p.model_id);
  p.parent_model_id.reset();
  if (j.contains("parent_model_id") && !j.at("parent_model_id").is_null())
    p.parent_model_id = j.at("parent_model_id").get<std::string>();
  j.at("dataset_digest").get_to(p.dataset_digest);
  j.at("config_digest").get_to(p.config_digest);
  j.at("model_digest").get_to(p.model_digest);
  j.at("provenance").get_to(p.provenance);
  j.at("report_digest").get_to(p.report_digest);
  j.at("gate_verdict").get_to(p.gate_verdict);
  p.gate_reasons = j.value("gate_reasons", std::vector<std::string>{});
  p.approvals = j.value("approvals", std::set<std::string>{});
  p.status = j.value("status", std::string{});
  p.timestamp = j.value("timestamp", std::string{});
  p.signature.reset();
  if (j.contains("signature") && !j.at("signature").is_null()) p.signature = j.at("signature").get<std::string>();
}

void to_json(nlohmann::json& j, const LedgerRecord& r) {
  j = nlohmann::json{{"payload", r.payload},
                     {"prev_hash", to_hex(r.prev_hash)},
                     {"record_hash", to_hex(r.record_hash)},
                     {"mac", to_hex(r.mac)}};
}

void from_json(const nlohmann::json& j, LedgerRecord& r) {
  j.at("payload").get_to(r.payload);
  r.prev_hash = digest_from_hex(j.at("prev_hash").get<std::string>());
  r.record_hash = digest_from_hex(j.at("record_hash").get<std::string>());
  r.mac = digest_from_hex(j.at("mac").get<std::string>());
}

}  // namespace secmlops::ledger
