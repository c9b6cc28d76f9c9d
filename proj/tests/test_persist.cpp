#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "epmvg/config.hpp"
#include "epmvg/errors.hpp"
#include "epmvg/params.hpp"
#include "epmvg/serialize.hpp"

using namespace epmvg;
using namespace epmvg::numcore;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name)
      : path(std::string("/tmp/epmvg_test_") + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace

TEST_CASE("param store registration, lookup, init determinism") {
  ParamStore a(7);
  Tensor w = a.add_xavier("enc.w", {4, 3}, 3, 4);
  Tensor b = a.add_zeros("enc.b", {4});
  CHECK(w.requires_grad());
  CHECK(b.requires_grad());
  CHECK(a.count() == 2);
  CHECK(a.scalar_count() == 16);
  CHECK(a.names()[0] == "enc.w");
  CHECK(a.has("enc.b"));
  CHECK(!a.has("enc.c"));
  CHECK_THROWS_AS(a.get("enc.c"), ParamError);
  CHECK_THROWS_AS(a.add_zeros("enc.w", {1}), ParamError);

  const double limit = std::sqrt(6.0 / 7.0);
  for (double v : w.data()) {
    CHECK(v >= -limit);
    CHECK(v <= limit);
  }

  // same seed and name → same init, independent of registration order
  ParamStore c(7);
  c.add_zeros("other", {2});
  Tensor w2 = c.add_xavier("enc.w", {4, 3}, 3, 4);
  CHECK(same_bits(w, w2));

  ParamStore d(8);
  CHECK(!same_bits(w, d.add_xavier("enc.w", {4, 3}, 3, 4)));

  a.set_requires_grad(false);
  CHECK(!w.requires_grad());
  a.set_requires_grad(true);
  CHECK(w.requires_grad());
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempFile f("roundtrip.ckpt");
  CheckpointData out;
  out.meta = {{"model.d", "32"}, {"trainer.epoch", "3"}, {"note", "a=b=c"}};
  ParamStore store(3);
  out.params.emplace_back("w", store.add_xavier("w", {3, 5}, 5, 3));
  out.params.emplace_back("b", store.add_zeros("b", {3}));
  out.params.emplace_back("scalar", Tensor::scalar(0.1 + 0.2));
  write_checkpoint(f.path, out);

  CheckpointData in = read_checkpoint(f.path, kStudentMagic);
  CHECK(in.version == kCheckpointVersion);
  REQUIRE(in.meta.size() == 3);
  CHECK(in.meta_value("model.d") == "32");
  CHECK(in.meta_value("note") == "a=b=c");
  CHECK(in.has_meta("trainer.epoch"));
  CHECK(!in.has_meta("missing"));
  CHECK_THROWS_AS(in.meta_value("missing"), FormatError);
  REQUIRE(in.params.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(in.params[i].first == out.params[i].first);
    CHECK(same_bits(in.params[i].second, out.params[i].second));
  }

  // writing the loaded data again produces identical bytes
  TempFile g("roundtrip2.ckpt");
  in.magic = kStudentMagic;
  write_checkpoint(g.path, in);
  CHECK(slurp(f.path) == slurp(g.path));
}

TEST_CASE("checkpoint reader rejects damage") {
  TempFile f("damage.ckpt");
  CheckpointData out;
  out.meta = {{"k", "v"}};
  out.params.emplace_back("w", Tensor::full({2, 2}, 1.25));
  write_checkpoint(f.path, out);
  const std::string good = slurp(f.path);

  spit(f.path, good.substr(0, good.size() - 3));
  CHECK_THROWS_WITH_AS(read_checkpoint(f.path, kStudentMagic),
                       doctest::Contains("truncated"), FormatError);

  spit(f.path, good + "xx");
  CHECK_THROWS_WITH_AS(read_checkpoint(f.path, kStudentMagic),
                       doctest::Contains("trailing"), FormatError);

  std::string wrong_magic = good;
  wrong_magic[0] = 'X';
  spit(f.path, wrong_magic);
  CHECK_THROWS_AS(read_checkpoint(f.path, kStudentMagic), FormatError);

  std::string wrong_version = good;
  wrong_version[5] = 9;  // version byte after the 5-byte magic
  spit(f.path, wrong_version);
  CHECK_THROWS_WITH_AS(read_checkpoint(f.path, kStudentMagic),
                       doctest::Contains("version"), FormatError);

  CHECK_THROWS_AS(read_checkpoint("/nonexistent/nowhere.ckpt", kStudentMagic),
                  DataError);
}

TEST_CASE("student and teacher magics are distinguished") {
  TempFile t("teacher.ckpt");
  CheckpointData tk;
  tk.magic = kTeacherMagic;
  tk.params.emplace_back("tower.w", Tensor::full({2}, 0.5));
  write_checkpoint(t.path, tk);

  CheckpointData back = read_checkpoint(t.path, kTeacherMagic);
  CHECK(back.magic == kTeacherMagic);

  CHECK_THROWS_WITH_AS(read_checkpoint(t.path, kStudentMagic),
                       doctest::Contains("teacher checkpoint"), FormatError);

  TempFile s("student.ckpt");
  CheckpointData sk;
  sk.params.emplace_back("w", Tensor::full({2}, 0.5));
  write_checkpoint(s.path, sk);
  CHECK_THROWS_AS(read_checkpoint(s.path, kTeacherMagic), FormatError);
}

TEST_CASE("snapshot, assign and drift comparison of param stores") {
  ParamStore store(11);
  Tensor w = store.add_xavier("w", {3, 2}, 2, 3);
  Tensor b = store.add_zeros("b", {3});

  CheckpointData snap = snapshot_params(store, kStudentMagic, {{"k", "v"}});
  CHECK(snap.magic == kStudentMagic);
  CHECK(snap.meta_value("k") == "v");
  REQUIRE(snap.params.size() == 2);
  CHECK(snap.params[0].first == "w");
  CHECK(same_bits(snap.params[0].second, w));
  // deep copy: mutating the store later must not touch the snapshot
  const double w00 = w.data()[0];
  w.mut_data()[0] += 1.0;
  CHECK(snap.params[0].second.data()[0] == w00);

  DriftReport drifted = compare_params(snap, store);
  CHECK(!drifted.identical);
  CHECK(drifted.max_abs_drift[0].second == doctest::Approx(1.0));
  CHECK(drifted.max_abs_drift[1].second == 0.0);
  CHECK(drifted.summary().find("1/2") != std::string::npos);
  CHECK(drifted.summary().find("w") != std::string::npos);

  // assign restores the snapshot values in place through live views
  assign_params(snap, store);
  CHECK(w.data()[0] == w00);
  DriftReport same = compare_params(snap, store);
  CHECK(same.identical);
  CHECK(same.summary().find("bit-identical") != std::string::npos);

  // extra checkpoint entries are ignored; missing or misshapen ones are not
  CheckpointData extra = snap;
  extra.params.emplace_back("opt.m/w", Tensor::zeros({3, 2}));
  assign_params(extra, store);

  CheckpointData missing;
  missing.params.emplace_back("w", Tensor::zeros({3, 2}));
  CHECK_THROWS_WITH_AS(assign_params(missing, store), doctest::Contains("b"),
                       FormatError);

  CheckpointData misshapen = snap;
  misshapen.params[1].second = Tensor::zeros({4});
  CHECK_THROWS_WITH_AS(assign_params(misshapen, store),
                       doctest::Contains("shape"), FormatError);

  // comparisons over different stores are rejected outright
  ParamStore other(11);
  other.add_zeros("w", {3, 2});
  CHECK_THROWS_AS(compare_params(snap, other), ContractError);
  other.add_zeros("bb", {3});
  CHECK_THROWS_AS(compare_params(snap, other), ContractError);
}

TEST_CASE("config parsing and typed getters") {
  Config c = Config::from_string(
      "# a comment\n"
      "epochs = 30\n"
      "base_lr = 1e-4   # trailing comment\n"
      "name = toy run\n"
      "frozen = true\n"
      "\n"
      "drop = 0.1\n",
      "test.cfg");
  CHECK(c.get_int("epochs", 0) == 30);
  CHECK(c.get_double("base_lr", 0.0) == 1e-4);
  CHECK(c.get_string("name", "") == "toy run");
  CHECK(c.get_bool("frozen", false));
  CHECK(c.get_double("drop", 0.0) == 0.1);
  CHECK(c.get_int("missing", 17) == 17);
  CHECK(c.get_u64("missing", 5) == 5);
  c.reject_unknown_keys();

  Config d = Config::from_string("a = 1\nmystery = 2\n", "d.cfg");
  CHECK(d.get_int("a", 0) == 1);
  CHECK_THROWS_WITH_AS(d.reject_unknown_keys(), doctest::Contains("mystery"),
                       ConfigError);

  CHECK_THROWS_AS(Config::from_string("just words\n"), ConfigError);
  CHECK_THROWS_AS(Config::from_string("= nothing\n"), ConfigError);
  CHECK_THROWS_AS(Config::from_string("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(Config::from_file("/nonexistent.cfg"), ConfigError);

  Config e = Config::from_string("n = 1.5\n");
  CHECK_THROWS_AS(e.get_int("n", 0), ConfigError);
  Config g = Config::from_string("n = x\n");
  CHECK_THROWS_AS(g.get_double("n", 0), ConfigError);
  Config h = Config::from_string("n = maybe\n");
  CHECK_THROWS_AS(h.get_bool("n", false), ConfigError);
  Config i = Config::from_string("n = -3\n");
  CHECK_THROWS_AS(i.get_u64("n", 0), ConfigError);

  Config j = Config::from_string("epochs = 5\n");
  j.set("epochs", "9");
  j.set("extra", "1");
  CHECK(j.get_int("epochs", 0) == 9);
  CHECK(j.get_int("extra", 0) == 1);
}
