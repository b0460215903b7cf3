#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ledger_fixture.hpp"
#include "ref_sha256.hpp"
#include "secmlops/error.hpp"
#include "secmlops/rng.hpp"

using namespace secmlops;
using namespace secmlops::ledger;

namespace {

std::filesystem::path fresh_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "secmlops_ledger_tests";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::filesystem::remove(p);
  return p;
}

LedgerRecord sealed(int n, bool pass, double eps = 0.02, bool approved = true) {
  auto p = ledger_fixture::payload(n, pass, eps);
  if (!approved) p.approvals = {"R3"};
  return seal(p, Digest{}, static_cast<std::uint64_t>(n), ledger_fixture::key());
}

}  // namespace

TEST_SUITE("ledger") {
  TEST_CASE("genesis and chaining") {
    Ledger l(fresh_path("chain.jsonl"));
    const auto key = ledger_fixture::key();
    const auto a = l.append(ledger_fixture::payload(0), key);
    const auto b = l.append(ledger_fixture::payload(0), key);
    CHECK(a.prev_hash == Digest{});
    CHECK(b.prev_hash == a.record_hash);
    CHECK(a.record_hash != b.record_hash);
    CHECK(a.payload.record_index == 0);
    CHECK(b.payload.record_index == 1);
    CHECK(a.payload.status == "approved");
    CHECK(l.verify(key).valid);
    CHECK(l.records().size() == 2);
  }

  TEST_CASE("hash and mac agree with an independent implementation") {
    const auto key = ledger_fixture::key(0x17);
    const auto r = seal(ledger_fixture::payload(3), Digest{}, 0, key);
    std::vector<std::uint8_t> msg(32, 0);
    const auto canon = refsha::bytes(canonical_payload(r.payload));
    msg.insert(msg.end(), canon.begin(), canon.end());
    const auto h = refsha::sha256(msg);
    CHECK(std::equal(h.begin(), h.end(), r.record_hash.begin()));
    const auto m = refsha::hmac(key, std::vector<std::uint8_t>(h.begin(), h.end()));
    CHECK(std::equal(m.begin(), m.end(), r.mac.begin()));
  }

  TEST_CASE("status assignment") {
    CHECK(sealed(0, true).payload.status == "approved");
    CHECK(sealed(0, true, 0.02, false).payload.status == "pending-approval");
    CHECK(sealed(0, false).payload.status == "rejected");
  }

  TEST_CASE("incomplete payloads are refused") {
    auto p = ledger_fixture::payload(0);
    p.dataset_digest.clear();
    CHECK_THROWS_AS(seal(p, Digest{}, 0, ledger_fixture::key()), Error);
    p = ledger_fixture::payload(0);
    p.gate_verdict = "maybe";
    CHECK_THROWS_AS(seal(p, Digest{}, 0, ledger_fixture::key()), Error);
  }

  TEST_CASE("verification finds tampering") {
    CHECK(verify_lines({}, ledger_fixture::key()).valid);
    const auto path = fresh_path("tamper.jsonl");
    Ledger l(path);
    const auto key = ledger_fixture::key();
    for (int i = 0; i < 5; ++i) l.append(ledger_fixture::payload(i), key);
    auto lines = l.lines();
    REQUIRE(lines.size() == 5);
    CHECK(verify_lines(lines, ledger_fixture::key(0x43)).broken_at == std::optional<std::size_t>(0));

    auto tampered = lines;
    const auto pos = tampered[3].find("model-3");
    tampered[3][pos + 6] = '9';
    const auto v = verify_lines(tampered, key);
    CHECK(!v.valid);
    CHECK(v.broken_at == std::optional<std::size_t>(3));

    auto reordered = lines;
    std::swap(reordered[1], reordered[2]);
    CHECK(verify_lines(reordered, key).broken_at == std::optional<std::size_t>(1));

    auto spaced = lines;
    spaced[2] = nlohmann::json::parse(spaced[2]).dump(1);
    CHECK(verify_lines(spaced, key).broken_at == std::optional<std::size_t>(2));
  }

  TEST_CASE("rollback picks the latest deployable record") {
    std::vector<LedgerRecord> rs{sealed(0, true), sealed(1, false), sealed(2, false)};
    CHECK(rollback(rs).payload.record_index == 0);
    rs = {sealed(0, true), sealed(1, true), sealed(2, false)};
    CHECK(rollback(rs).payload.record_index == 1);
    rs = {sealed(0, false), sealed(1, true, 0.02, false)};
    CHECK_THROWS_AS(rollback(rs), Error);
  }

  TEST_CASE("rollback matches a linear scan") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<LedgerRecord> rs;
      const int n = 1 + static_cast<int>(rng.below(10));
      for (int i = 0; i < n; ++i) rs.push_back(sealed(i, rng.bernoulli(0.4), 0.02, rng.bernoulli(0.8)));
      int expect = -1;
      for (int i = 0; i < n; ++i)
        if (rs[i].payload.gate_verdict == "pass" && rs[i].payload.approvals.count("R3") &&
            rs[i].payload.approvals.count("R8"))
          expect = i;
      if (expect < 0) {
        CHECK_THROWS_AS(rollback(rs), Error);
      } else {
        CHECK(rollback(rs).payload.record_index == static_cast<std::uint64_t>(expect));
      }
    }
  }

  TEST_CASE("safe mode picks the most robust record") {
    std::vector<LedgerRecord> rs{sealed(0, true, 0.01), sealed(1, true, 0.04), sealed(2, true, 0.02)};
    CHECK(safe_mode(rs).payload.record_index == 1);
    rs = {sealed(0, true, 0.01)};
    CHECK(safe_mode(rs).payload.record_index == 0);
    rs.clear();
    for (int i = 0; i < 6; ++i) rs.push_back(sealed(i, true, i == 2 || i == 5 ? 0.02 : 0.01));
    CHECK(safe_mode(rs).payload.record_index == 5);
    rs[5] = sealed(5, false, 0.5);
    CHECK(safe_mode(rs).payload.record_index == 2);
  }

  TEST_CASE("a held lock blocks a second writer") {
    const auto path = fresh_path("locked.jsonl");
    const std::string lock = path.string() + ".lock";
    const int fd = ::open(lock.c_str(), O_CREAT | O_RDWR, 0644);
    REQUIRE(fd >= 0);
    REQUIRE(::flock(fd, LOCK_EX | LOCK_NB) == 0);
    Ledger l(path);
    try {
      l.append(ledger_fixture::payload(0), ledger_fixture::key());
      FAIL("append should have failed");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kConcurrentWriter);
    }
    ::flock(fd, LOCK_UN);
    ::close(fd);
    CHECK_NOTHROW(l.append(ledger_fixture::payload(0), ledger_fixture::key()));
  }

  TEST_CASE("payload json round trip") {
    const auto r = sealed(4, true);
    const nlohmann::json j = r;
    CHECK(j.get<LedgerRecord>() == r);
    CHECK(record_line(r) == j.dump());
  }

  TEST_CASE("key from the environment") {
    ::setenv("SECMLOPS_LEDGER_KEY", "00ff10", 1);
    CHECK(key_from_env() == std::vector<std::uint8_t>{0x00, 0xff, 0x10});
    ::setenv("SECMLOPS_LEDGER_KEY", "xyz", 1);
    CHECK_THROWS_AS(key_from_env(), Error);
    ::unsetenv("SECMLOPS_LEDGER_KEY");
    CHECK_THROWS_AS(key_from_env(), Error);
  }
}
