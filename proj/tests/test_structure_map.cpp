#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "sparseprof/aggregator.hpp"
#include "sparseprof/byte_io.hpp"
#include "sparseprof/parallel.hpp"
#include "sparseprof/structure_map.hpp"
#include "support.hpp"

using namespace sparseprof;
using testing::TempDir;

namespace {

std::string parse_error(std::string_view text) {
  try {
    parse_structure(text);
  } catch (const FormatError& e) {
    return e.reason();
  }
  return {};
}

}  // namespace

TEST_CASE("parse and format round trip") {
  auto s = parse_structure(testing::kFooStruct);
  CHECK(s.binary_path == "libfoo.so");
  REQUIRE(s.entries.size() == 4);
  CHECK(s.entries[2].lo == 0x30);
  CHECK(s.entries[2].hi == 0x3b);
  CHECK(s.entries[2].frames ==
        std::vector<Frame>{Frame::func("foo"), Frame::loop("foo.c", 7), Frame::line("foo.c", 8)});
  CHECK(parse_structure(format_structure(s)) == s);
  CHECK(parse_structure("# comment\n\nbinary x\n") == StructureFile{"x", {}});
}

TEST_CASE("structure syntax errors") {
  CHECK(parse_error("map 0 1 := func a\n") == "map before binary line");
  CHECK(parse_error("") == "missing binary line");
  CHECK(parse_error("binary a\nbinary b\n") == "duplicate binary line");
  CHECK(parse_error("binary a\nmap 0 zz := func a\n") == "bad hex offset");
  CHECK(parse_error("binary a\nmap 4 4 := func a\n") == "empty range");
  CHECK(parse_error("binary a\nmap 0 8 := func a\nmap 4 9 := func b\n") == "ranges unsorted or overlapping");
  CHECK(parse_error("binary a\nmap 0 8 := proc a\n") == "unknown frame kind");
  CHECK(parse_error("binary a\nmap 0 8 := line a.c\n") == "bad file:line");
  CHECK(parse_error("binary a\nmap 0 8 := line a.c:x\n") == "bad line number");
  CHECK(parse_error("binary a\nmap 0 8 func a\n") == "missing ':='");
  CHECK(parse_error("binary a\nmop\n") == "unrecognized line");
}

TEST_CASE("expansion examples") {
  auto s = parse_structure(testing::kFooStruct);
  BinaryId b(1);
  CHECK(expand_with(&s, b, 0x20) ==
        std::vector<Frame>{Frame::func("foo"), Frame::line("foo.c", 5), Frame::instruction(b, 0x20)});
  CHECK(expand_with(&s, b, 0x3B) == std::vector<Frame>{Frame::func("foo"), Frame::line("foo.c", 9),
                                                       Frame::inlined("baz"), Frame::line("foo.c", 20),
                                                       Frame::instruction(b, 0x3B)});
  CHECK(expand_with(&s, b, 0x3A).size() == 4);
  CHECK(expand_with(&s, b, 0xDEAD) == std::vector<Frame>{Frame::instruction(b, 0xDEAD)});
  CHECK(expand_with(&s, b, 0x00) == std::vector<Frame>{Frame::instruction(b, 0x00)});
  CHECK(expand_with(nullptr, b, 0x20) == std::vector<Frame>{Frame::instruction(b, 0x20)});
}

TEST_CASE("structure file lookup path") {
  CHECK(structure_path_for("/opt/lib/libfoo.so", {}, std::nullopt) == "/opt/lib/libfoo.structz");
  CHECK(structure_path_for("libfoo.so", "/data", std::nullopt) == "/data/libfoo.structz");
  CHECK(structure_path_for("/opt/lib/libfoo.so", "/data", std::filesystem::path("/s")) == "/s/libfoo.structz");
}

TEST_CASE("interning is stable") {
  StructureRegistry reg(std::nullopt, [](const std::filesystem::path&) { return std::nullopt; });
  auto a = reg.intern("a");
  auto b = reg.intern("b");
  CHECK(a != b);
  CHECK(reg.intern("a") == a);
  CHECK(reg.binary_paths() == std::vector<std::string>{"a", "b"});
  CHECK_THROWS_AS(reg.ensure_loaded(BinaryId(7)), NotFoundError);
}

TEST_CASE("concurrent callers load each structure exactly once") {
  for (int rep = 0; rep < 10; ++rep) {
    std::atomic<int> calls{0};
    StructureRegistry reg(std::nullopt, [&](const std::filesystem::path&) -> std::optional<StructureFile> {
      ++calls;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      return parse_structure(testing::kFooStruct);
    });
    auto b = reg.intern("libfoo.so");
    std::vector<std::vector<Frame>> got(8);
    run_workers(8, [&](unsigned w) {
      reg.ensure_loaded(b);
      got[w] = reg.expand(b, 0x20);
    });
    CHECK(calls == 1);
    CHECK(reg.load_count() == 1);
    CHECK(reg.state(b) == StructureRegistry::State::ready);
    for (const auto& g : got) CHECK(g.size() == 3);
  }
}

TEST_CASE("sixteen binaries, each loaded once, concurrently") {
  std::atomic<int> calls{0};
  StructureRegistry reg(std::nullopt, [&](const std::filesystem::path& p) -> std::optional<StructureFile> {
    ++calls;
    StructureFile s;
    s.binary_path = p.stem().string();
    s.entries.push_back({0, 0x100, {Frame::func(p.stem().string())}});
    return s;
  });
  std::vector<BinaryId> ids;
  for (int i = 0; i < 16; ++i) ids.push_back(reg.intern("lib" + std::to_string(i) + ".so"));
  run_workers(8, [&](unsigned w) {
    for (int k = 0; k < 64; ++k) {
      auto b = ids[(w * 5 + k) % 16];
      auto f = reg.expand(b, 0x10);
      REQUIRE(f.front() == Frame::func("lib" + std::to_string(b.value())));
    }
  });
  CHECK(calls == 16);
}

TEST_CASE("missing or unreadable structure falls back to the bare instruction") {
  TempDir dir;
  StructureRegistry reg;
  auto b = reg.intern("nothing.so", dir.path());
  CHECK(reg.expand(b, 0x44) == std::vector<Frame>{Frame::instruction(b, 0x44)});
  CHECK(reg.state(b) == StructureRegistry::State::missing);

  write_file(dir / "broken.structz", std::vector<std::uint8_t>{'x'});
  auto c = reg.intern("broken.so", dir.path());
  CHECK(reg.expand(c, 0x44).size() == 1);

  StructureRegistry throwing(std::nullopt, [](const std::filesystem::path&) -> std::optional<StructureFile> {
    throw IoError("boom");
  });
  auto d = throwing.intern("x.so");
  CHECK(throwing.expand(d, 1).size() == 1);
}

TEST_CASE("full fixture expansion matches the hand-built tree") {
  TempDir dir;
  auto file = testing::write_expansion_fixture(dir.path());
  StructureRegistry reg;
  CctStore store;
  class1_for_profile(file, ProfileId(1), store, reg, dir.path());
  CHECK(store.size() == testing::kExpansionNodes + 1);
  CHECK(reg.binary_paths() == std::vector<std::string>{"main", "libfoo.so", "libbar.so"});

  CctStore want;
  for (const auto& p : testing::expansion_paths()) want.insert_path(p);
  CHECK(want.size() == testing::kExpansionNodes + 1);
  CHECK(canonical_records(store) == canonical_records(want));
}
