#include <doctest.h>

#include <array>
#include <cstdio>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "sparseprof/byte_io.hpp"
#include "support.hpp"

using namespace sparseprof;
using testing::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  std::string cmd = std::string(SPARSEPROF_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p);
  std::array<char, 4096> buf;
  while (auto n = std::fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
  int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("version and usage") {
  auto v = cli("--version");
  CHECK(v.code == 0);
  CHECK(v.out.find("SPFM 1") != std::string::npos);
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("gen").code == 1);
  CHECK(cli("gen -o /tmp/x --metrics 0").code == 1);
  CHECK(cli("bench merge --reps 4").code == 1);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("gen, analyze, query and stats end to end") {
  TempDir dir;
  auto g = cli("--json gen --profiles 6 --metrics 4 --depth 2 --branch 3 --traces 4 --seed 2 -o " + q(dir / "in"));
  REQUIRE(g.code == 0);
  auto gj = nlohmann::json::parse(g.out);
  CHECK(gj["profiles"] == 6);

  auto a = cli("--json analyze -j 2 --cms --traces -o " + q(dir / "out") + " " + q(dir / "in"));
  REQUIRE(a.code == 0);
  auto aj = nlohmann::json::parse(a.out);
  CHECK(aj["profiles"] == 6);
  CHECK(aj["contexts"] == gj["unified_contexts"]);
  CHECK(aj["exclusive_nonzeros"] == gj["nonzeros"]);
  for (auto f : {"profile.pmsdb", "context.cmsdb", "trace.db"}) CHECK(std::filesystem::exists(dir / "out" / f));

  auto pq = cli("query pms " + q(dir / "out" / "profile.pmsdb") + " --profile 1");
  REQUIRE(pq.code == 0);
  auto rows = lines(pq.out);
  REQUIRE(rows.size() > 1);
  CHECK(rows[0] == "profile\tcontext\tmetric\tvalue");

  // Each PMS row is found again through the CMS.
  for (std::size_t i = 1; i < rows.size(); i += std::max<std::size_t>(1, rows.size() / 10)) {
    std::istringstream is(rows[i]);
    std::string p, c, m, v;
    is >> p >> c >> m >> v;
    auto cq = cli("--json query cms " + q(dir / "out" / "context.cmsdb") + " --context " + c + " --profile 1");
    REQUIRE(cq.code == 0);
    bool found = false;
    for (const auto& l : lines(cq.out)) {
      auto j = nlohmann::json::parse(l);
      if (j["metric"] == m) found = j["value"].dump() == v;
    }
    CHECK_MESSAGE(found, rows[i]);
  }

  auto sq = cli("query pms " + q(dir / "out" / "profile.pmsdb") + " --profile 0 --context 0");
  CHECK(sq.code == 0);
  CHECK(sq.out.find(":I:sum") != std::string::npos);

  auto st = cli("--json stats " + q(dir / "in"));
  CHECK(st.code == 0);
  CHECK(nlohmann::json::parse(st.out)["files"] == 6);
  auto sp = cli("--json stats " + q(dir / "out" / "profile.pmsdb"));
  CHECK(sp.code == 0);
  CHECK(nlohmann::json::parse(sp.out)["profiles"] == 6);

  auto tq = cli("-q transpose " + q(dir / "out" / "profile.pmsdb") + " -o " + q(dir / "t.cmsdb"));
  CHECK(tq.code == 0);
  CHECK(tq.out.empty());
  CHECK(read_file(dir / "t.cmsdb") == read_file(dir / "out" / "context.cmsdb"));
}

TEST_CASE("error exit codes and no partial outputs") {
  TempDir dir;
  REQUIRE(cli("-q gen --profiles 3 --metrics 2 --depth 2 --branch 2 -o " + q(dir / "in")).code == 0);
  auto a = cli("-q analyze -o " + q(dir / "out") + " " + q(dir / "in"));
  REQUIRE(a.code == 0);
  CHECK(cli("query pms " + q(dir / "out" / "profile.pmsdb") + " --profile 999").code == 2);
  CHECK(cli("query pms " + q(dir / "nope.pmsdb") + " --profile 1").code == 3);

  auto victim = dir / "in" / "profile-00002.spfm";
  auto b = read_file(victim);
  b[1] ^= 0xFF;
  write_file(victim, b);
  CHECK(cli("-q analyze --cms -o " + q(dir / "bad") + " " + q(dir / "in")).code == 2);
  CHECK(std::filesystem::is_empty(dir / "bad"));
  CHECK(cli("-q analyze -o " + q(dir / "bad2") + " " + q(dir / "missing.spfm")).code == 2);

  write_file(dir / "junk.pmsdb", std::vector<std::uint8_t>(100, 7));
  CHECK(cli("query pms " + q(dir / "junk.pmsdb") + " --profile 1").code == 2);
  CHECK(cli("bench scaling " + q(dir / "in") + " --threads 1,x").code == 1);
}

TEST_CASE("bench merge emits one row per strategy") {
  auto r = cli("--json bench merge --threads 2 --reps 5 --nodes 200 --trees 4");
  REQUIRE(r.code == 0);
  auto rows = lines(r.out);
  CHECK(rows.size() == 4);
  for (const auto& l : rows) CHECK(nlohmann::json::parse(l)["unified_nodes"] > 0);
}
