#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qfam/metrics.hpp"

namespace qfam {
namespace {

void burn(std::chrono::milliseconds d) {
  const auto end = thread_cpu_now() + d;
  volatile std::uint64_t x = 0;
  while (thread_cpu_now() < end) x = x + 1;
}

TEST(AmplificationFactor, Ratio) {
  EXPECT_DOUBLE_EQ(*amplification_factor(4, 2), 2.0);
  EXPECT_DOUBLE_EQ(*amplification_factor(3, 3), 1.0);
  EXPECT_FALSE(amplification_factor(5, 0).has_value());
  EXPECT_DOUBLE_EQ(*amplification_factor(0, 1), 0.0);
}

TEST(Median, OddEvenEmpty) {
  EXPECT_FALSE(median(std::vector<double>{}).has_value());
  EXPECT_DOUBLE_EQ(*median(std::vector<double>{3, 1, 2}), 2);
  EXPECT_DOUBLE_EQ(*median(std::vector<double>{4, 1, 2, 3}), 2.5);
  EXPECT_DOUBLE_EQ(*median(std::vector<std::uint64_t>{10, 1, 1000}), 10);
}

TEST(CpuScope, NestedScopesAreExclusive) {
  CpuAccount acc;
  const auto t0 = thread_cpu_now();
  {
    CpuScope outer(acc, CpuCategory::kOther);
    burn(std::chrono::milliseconds(20));
    {
      CpuScope inner(acc, CpuCategory::kSolve);
      burn(std::chrono::milliseconds(30));
      {
        CpuScope innermost(acc, CpuCategory::kSend);
        burn(std::chrono::milliseconds(10));
      }
    }
    burn(std::chrono::milliseconds(10));
  }
  const double total = std::chrono::duration<double>(thread_cpu_now() - t0).count();
  const CpuTimes t = acc.snapshot();
  EXPECT_LE(t.total(), total + 1e-6);  // conservation
  EXPECT_NEAR(t[CpuCategory::kSolve], 0.030, 0.005);
  EXPECT_NEAR(t[CpuCategory::kSend], 0.010, 0.005);
  EXPECT_NEAR(t[CpuCategory::kOther], 0.030, 0.005);
  EXPECT_EQ(t[CpuCategory::kToken], 0);
}

TEST(CpuScope, FlushBooksWithoutClosing) {
  CpuAccount acc;
  CpuScope s(acc, CpuCategory::kToken);
  burn(std::chrono::milliseconds(10));
  s.flush();
  const double first = acc.snapshot()[CpuCategory::kToken];
  EXPECT_GT(first, 0.008);
  burn(std::chrono::milliseconds(10));
  s.flush();
  EXPECT_GT(acc.snapshot()[CpuCategory::kToken], first + 0.008);
}

TEST(RoleSink, SnapshotsAndDeltas) {
  RoleSink sink;
  sink.add(Counter::kSent, 3);
  sink.record_response(std::chrono::milliseconds(2));
  const RoleSnapshot a = sink.snapshot();
  sink.add(Counter::kSent);
  sink.add(Counter::kRejectOverloaded, 2);
  sink.record_response(std::chrono::milliseconds(5));
  sink.record_solve(std::chrono::microseconds(1500), 77);
  const RoleSnapshot b = sink.snapshot();
  const RoleSnapshot d = delta(b, a);
  EXPECT_EQ(d.counts[Counter::kSent], 1u);
  EXPECT_EQ(d.counts.rejects(), 2u);
  ASSERT_EQ(d.response_ms.size(), 1u);
  EXPECT_DOUBLE_EQ(d.response_ms[0], 5.0);
  EXPECT_DOUBLE_EQ(d.solve_ms.at(0), 1.5);
  EXPECT_EQ(d.solve_iterations.at(0), 77u);

  RoleSnapshot acc = a;
  acc += d;
  EXPECT_EQ(acc.counts, b.counts);
  EXPECT_EQ(acc.response_ms, b.response_ms);
}

MetricsReport sample_report() {
  MetricsReport r;
  SampleRow s;
  s.timestamp_s = 1;
  s.phase = "rate_20";
  s.role = kRoleServer;
  s.cpu.seconds = {0.001, 0, 0.0123456789, 0.0002, 0.5};
  s.counts.values[static_cast<std::size_t>(Counter::kSent)] = 20;
  s.counts.values[static_cast<std::size_t>(Counter::kShlos)] = 19;
  s.counts.values[static_cast<std::size_t>(Counter::kRejectOverloaded)] = 1;
  s.amplification_factor = 2.5;
  r.rows.push_back(s);
  s.role = kRoleAttacker;
  s.median_response_ms = 1.25;
  r.rows.push_back(s);
  return r;
}

TEST(Csv, HeaderOnlyForEmptyReport) {
  std::ostringstream out;
  emit_csv(MetricsReport{}, out);
  EXPECT_EQ(out.str(), std::string(kCsvHeader) + "\n");
}

TEST(Csv, RowsAndAbsentFields) {
  std::ostringstream out;
  emit_csv(sample_report(), out);
  std::istringstream in(out.str());
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  EXPECT_EQ(header, kCsvHeader);
  EXPECT_EQ(row1, "1.000,rate_20,server,0.001000,0.000000,0.012346,0.000200,20,0,19,0,0,1,,2.5000");
  EXPECT_EQ(row2,
            "1.000,rate_20,attacker,0.001000,0.000000,0.012346,0.000200,20,0,19,0,0,1,1.250,2.5000");
}

TEST(Csv, ReEmissionIsByteIdentical) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto p1 = dir / "qfam_csv_1.csv";
  const auto p2 = dir / "qfam_csv_2.csv";
  emit_csv(sample_report(), p1);
  emit_csv(sample_report(), p2);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  EXPECT_EQ(slurp(p1), slurp(p2));
  EXPECT_FALSE(slurp(p1).empty());
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Csv, UnwritablePath) {
  try {
    emit_csv(sample_report(), std::filesystem::path("/nonexistent/dir/out.csv"));
    FAIL();
  } catch (const HarnessError& e) {
    EXPECT_EQ(e.code(), HarnessErrc::kIo);
  }
}

TEST(PhaseReport, RatesAndFactor) {
  PhaseReport p;
  p.duration_s = 10;
  p.roles[kRoleServer].cpu.seconds = {0, 0, 4, 0, 0};
  p.roles[kRoleAttacker].cpu.seconds = {1, 1, 0, 0, 0};
  p.roles[kRoleAttacker].counts.values[static_cast<std::size_t>(Counter::kSolutions)] = 50;
  EXPECT_DOUBLE_EQ(*p.amplification_factor(), 2.0);
  EXPECT_DOUBLE_EQ(p.rate(kRoleAttacker, Counter::kSolutions), 5.0);
  EXPECT_DOUBLE_EQ(p.rate(kRoleClient, Counter::kSolutions), 0.0);
  EXPECT_EQ(p.role(kRoleClient), nullptr);
}

}  // namespace
}  // namespace qfam
