#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tgpt/embedding.hpp"
#include "tgpt/tape.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

using namespace tgpt;
using namespace tgpt::embed;

namespace {

data::FieldSchema entity_field(const std::string& name, int n) {
  data::FieldSchema f;
  f.name = name;
  f.kind = data::FieldKind::entity;
  f.cardinality = n + 1;
  return f;
}

}  // namespace

TEST_CASE("numeric log map") {
  CHECK(log_map(0.0, false) == doctest::Approx(std::log(1e-6)));
  CHECK(std::log(1e-6) == doctest::Approx(-13.8155).epsilon(1e-4));
  CHECK(log_map(std::exp(1.0) - 1e-6, false) == doctest::Approx(1.0));
  CHECK(log_map(5.0, true) == doctest::Approx(std::log1p(5.0)));
  CHECK(log_map(-5.0, true) == doctest::Approx(-std::log1p(5.0)));
  // x -> 10x shifts the unsigned map by exactly log 10 (up to eps effects).
  CHECK(log_map(70.0, false) - log_map(7.0, false) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("metadata embedder: identity-like numeric affine and pad rows") {
  data::Schema s;
  data::FieldSchema c;
  c.name = "code";
  c.kind = data::FieldKind::categorical;
  c.cardinality = 5;
  s.categorical.push_back(c);
  data::FieldSchema n;
  n.name = "amount";
  n.kind = data::FieldKind::numeric;
  s.numeric.push_back(n);
  s.entities.push_back(entity_field("mcc", 3));
  s.n_features = 0;
  s.validate();

  ParamStore store;
  auto rng = make_rng(1, 1);
  MetadataEmbedder emb("m", s, 4, store, rng);

  // Weight 1 broadcast, zero bias: embedding of x = e - eps is all ones.
  store.at("m.num.amount.w").value.setOnes();
  store.at("m.num.amount.b").value.setZero();
  ad::Tape t;
  Mat num(2, 1);
  num << std::exp(1.0) - 1e-6, 7.0;
  const auto vals = emb.field_values(t, store, {{0, 3}}, num);
  REQUIRE(vals.size() == 2);
  const Mat cat_rows = vals[0].val();
  CHECK(cat_rows.row(0).cwiseAbs().maxCoeff() == 0.0);  // index 0 = padding row
  const Mat num_rows = vals[1].val();
  for (int c = 0; c < 4; ++c) CHECK(num_rows(0, c) == doctest::Approx(1.0));
  // Scale shift: embedding input for 10x differs by exactly log 10 per coord.
  Mat num10(2, 1);
  num10 << 70.0, 7.0;
  ad::Tape t2;
  const auto v10 = emb.field_values(t2, store, {{0, 3}}, num10);
  CHECK(v10[1].val()(0, 0) - num_rows(1, 0) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-6));

  CHECK_THROWS_AS(emb.field_values(t, store, {{0, 5}}, num), std::out_of_range);
  Mat neg(2, 1);
  neg << -1.0, 1.0;
  CHECK_THROWS_AS(emb.field_values(t, store, {{0, 3}}, neg), std::invalid_argument);
}

TEST_CASE("padding index embeds to zero with zero gradient") {
  ParamStore store;
  auto rng = make_rng(2, 1);
  EntityEmbedder plain("e", entity_field("mcc", 6), 3, {}, store, rng);
  ad::Tape t;
  const auto v = plain.embed(t, store, {0, 4, 0});
  const Mat rows = v.val();
  CHECK(rows.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(rows.row(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(rows.row(1).cwiseAbs().maxCoeff() > 0.0);

  const auto loss = t.sum_all(v);
  t.backward(loss);
  CHECK(store.at("e.ent.mcc").grad.row(0).cwiseAbs().maxCoeff() == 0.0);  // frozen pad row
  CHECK(store.at("e.ent.mcc").grad.row(4).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("lookup table: range, determinism, independent recomputation") {
  const int n = 100000, m = 1000, k = 2;
  const std::vector<std::uint32_t> seeds{0, 1};
  const auto lut = build_lookup_table(n, m, k, seeds);
  REQUIRE(lut.rows() == k);
  REQUIRE(lut.cols() == n + 1);
  for (int h = 0; h < k; ++h) {
    CHECK(lut(h, 0) == 0);
    for (int e = 1; e <= n; ++e) {
      CHECK(lut(h, e) >= 1);
      CHECK(lut(h, e) <= m);
    }
  }
  const auto again = build_lookup_table(n, m, k, seeds);
  CHECK((lut == again));

  // Independent recomputation of the hash addressing and its collisions.
  long collisions = 0;
  for (int e = 1; e <= n; ++e) {
    for (int h = 0; h < k; ++h) {
      const std::uint32_t want =
          murmur3_32(static_cast<std::uint32_t>(e), seeds[static_cast<size_t>(h)]);
      CHECK(lut(h, e) == static_cast<int>(want % static_cast<std::uint32_t>(m)) + 1);
    }
    if (lut(0, e) == lut(1, e)) ++collisions;
  }
  // Birthday-level double collisions: expected n/m = 100.
  CHECK(collisions > 50);
  CHECK(collisions < 200);
}

TEST_CASE("compositional embedding composes means of addressed rows") {
  ParamStore store;
  auto rng = make_rng(3, 1);
  EntityEmbedderConfig cfg;
  cfg.compositional = true;
  cfg.m_rows = 7;
  cfg.k_hash = 2;
  EntityEmbedder emb("c", entity_field("merchant", 50), 4, cfg, store, rng);

  const auto lut = build_lookup_table(50, 7, 2, {0, 1});
  const Mat& table = store.at(emb.table_name()).value;
  ad::Tape t;
  const Mat rows = emb.embed(t, store, {0, 13, 37}).val();
  CHECK(rows.row(0).cwiseAbs().maxCoeff() == 0.0);
  for (int which = 1; which <= 2; ++which) {
    const int e = which == 1 ? 13 : 37;
    const Mat want = 0.5 * (table.row(lut(0, e)) + table.row(lut(1, e)));
    CHECK((rows.row(which) - want).cwiseAbs().maxCoeff() < 1e-12);
  }

  // Both hashes colliding to one row -> exactly that row: find such an id.
  int dup = -1;
  for (int e = 1; e <= 50; ++e)
    if (lut(0, e) == lut(1, e)) dup = e;
  if (dup >= 0) {
    ad::Tape t2;
    const Mat r = emb.embed(t2, store, {dup}).val();
    CHECK((r.row(0) - table.row(lut(0, dup))).cwiseAbs().maxCoeff() < 1e-12);
  }

  CHECK(emb.param_reduction() == doctest::Approx(1.0 - 8.0 / 51.0));
  CHECK(emb.table_rows() == 8);  // m + padding row
}

TEST_CASE("degenerate hashing (k=1, injective) equals a plain table") {
  // With m large, retry seeds until the single hash is injective on 1..n.
  const int n = 12;
  int m = 4096;
  std::uint32_t seed = 0;
  const auto injective = [&](std::uint32_t s) {
    const auto lut = build_lookup_table(n, m, 1, {s});
    std::set<int> seen;
    for (int e = 1; e <= n; ++e) seen.insert(lut(0, e));
    return static_cast<int>(seen.size()) == n;
  };
  while (!injective(seed)) ++seed;

  ParamStore store;
  auto rng = make_rng(4, 1);
  EntityEmbedderConfig cfg;
  cfg.compositional = true;
  cfg.m_rows = m;
  cfg.k_hash = 1;
  cfg.seeds = {seed};
  EntityEmbedder emb("i", entity_field("mcc", n), 3, cfg, store, rng);
  const auto lut = build_lookup_table(n, m, 1, {seed});
  const Mat& table = store.at(emb.table_name()).value;
  ad::Tape t;
  std::vector<int> ids;
  for (int e = 0; e <= n; ++e) ids.push_back(e);
  const Mat rows = emb.embed(t, store, ids).val();
  for (int e = 0; e <= n; ++e)
    CHECK((rows.row(e) - table.row(e == 0 ? 0 : lut(0, e))).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("compositional gradients land only in addressed rows") {
  ParamStore store;
  auto rng = make_rng(5, 1);
  EntityEmbedderConfig cfg;
  cfg.compositional = true;
  cfg.m_rows = 29;
  cfg.k_hash = 2;
  EntityEmbedder emb("g", entity_field("merchant", 40), 3, cfg, store, rng);
  const auto lut = build_lookup_table(40, 29, 2, {0, 1});

  ad::Tape t;
  const auto loss = t.sum_all(emb.embed(t, store, {17}));
  t.backward(loss);
  const std::set<int> touched{lut(0, 17), lut(1, 17)};
  const Mat& g = store.at(emb.table_name()).grad;
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    if (touched.count(static_cast<int>(r)))
      CHECK(g.row(r).cwiseAbs().maxCoeff() > 0.0);
    else
      CHECK(g.row(r).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("materialized rows agree with on-the-fly embedding") {
  ParamStore store;
  auto rng = make_rng(6, 1);
  EntityEmbedderConfig cfg;
  cfg.compositional = true;
  cfg.m_rows = 9;
  cfg.k_hash = 3;
  EntityEmbedder emb("mt", entity_field("merchant", 25), 5, cfg, store, rng);
  const Mat all = emb.materialize_rows(store);
  REQUIRE(all.rows() == 26);
  std::vector<int> ids;
  for (int e = 0; e <= 25; ++e) ids.push_back(e);
  ad::Tape t;
  const Mat rows = emb.embed(t, store, ids).val();
  CHECK((rows - all).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("feature embedder shapes and zero cases") {
  ParamStore store;
  auto rng = make_rng(7, 1);
  FeatureEmbedder fe("f", 400, 4, false, store, rng);
  ad::Tape t;
  const Mat feats = Mat::Zero(1, 400);
  store.at("f.feat.b").value.setZero();
  const Mat rows = fe.embed(t, store, feats).val();
  REQUIRE(rows.rows() == 400);
  REQUIRE(rows.cols() == 4);
  CHECK(rows.cwiseAbs().maxCoeff() == 0.0);  // zero features, zero bias

  // Single feature with identity-like affine: output = broadcast input.
  ParamStore store1;
  FeatureEmbedder one("o", 1, 3, false, store1, rng);
  store1.at("o.feat.w").value.setOnes();
  store1.at("o.feat.b").value.setZero();
  ad::Tape t2;
  Mat x(2, 1);
  x << 2.5, -1.25;
  const Mat out = one.embed(t2, store1, x).val();
  CHECK(out(0, 0) == doctest::Approx(2.5));
  CHECK(out(0, 2) == doctest::Approx(2.5));
  CHECK(out(1, 1) == doctest::Approx(-1.25));

  // Shared mode uses one row of parameters for every channel.
  ParamStore store2;
  FeatureEmbedder sh("s", 5, 4, true, store2, rng);
  CHECK(store2.at("s.feat.w").value.rows() == 1);
  ad::Tape t3;
  const Mat xi = Mat::Ones(1, 5);
  const Mat rows_sh = sh.embed(t3, store2, xi).val();
  for (int i = 1; i < 5; ++i)
    CHECK((rows_sh.row(i) - rows_sh.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("external vectors: export/load round-trip and overwrite") {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("tgpt_emb_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "vec.jsonl").string();

  ParamStore store;
  auto rng = make_rng(8, 1);
  EntityEmbedder emb("x", entity_field("merchant", 9), 4, {}, store, rng);
  export_entity_vectors(path, emb, store);

  ParamStore store2;
  auto rng2 = make_rng(99, 1);
  EntityEmbedder emb2("x", entity_field("merchant", 9), 4, {}, store2, rng2);
  load_external_vectors(path, emb2, store2);
  CHECK((store2.at("x.ent.merchant").value - store.at("x.ent.merchant").value)
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  // Single-row overwrite.
  {
    std::ofstream f(path, std::ios::binary);
    f << R"({"index":7,"vector":[1.0,2.0,3.0,4.0]})" << "\n";
  }
  load_external_vectors(path, emb2, store2);
  Mat want(1, 4);
  want << 1, 2, 3, 4;
  CHECK((store2.at("x.ent.merchant").value.row(7) - want).cwiseAbs().maxCoeff() == 0.0);

  // Empty file: table unchanged.
  const Mat before = store2.at("x.ent.merchant").value;
  {
    std::ofstream f(path, std::ios::binary);
  }
  load_external_vectors(path, emb2, store2);
  CHECK((store2.at("x.ent.merchant").value - before).cwiseAbs().maxCoeff() == 0.0);

  // Compositional targets are rejected.
  ParamStore store3;
  EntityEmbedderConfig comp;
  comp.compositional = true;
  comp.m_rows = 3;
  EntityEmbedder emb3("y", entity_field("merchant", 9), 4, comp, store3, rng);
  CHECK_THROWS_AS(load_external_vectors(path, emb3, store3), std::invalid_argument);
  std::filesystem::remove_all(dir);
}
