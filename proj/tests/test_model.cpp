#include <cmath>

#include <doctest.h>

#include "oracles.hpp"
#include "tern/error.hpp"
#include "tern/gradcheck.hpp"
#include "tern/model.hpp"
#include "tern/training.hpp"

using namespace tern;

namespace {

TernConfig small_config() {
  TernConfig c;
  c.d_r = 8;
  c.d_visual = 8;
  c.d_text = 8;
  c.d_common = 8;
  c.n_visual_te = 1;
  c.n_text_te = 1;
  c.n_shared_te = 1;
  c.d_ff = 16;
  c.dropout = 0.0;
  c.heads = 2;
  c.max_regions = 36;
  c.max_seq_len = 32;
  c.precision = Precision::f64;
  return c;
}

RegionSet random_region_set(const std::string& id, int n, int d_r, Rng& rng) {
  RegionSet rs;
  rs.image_id = id;
  rs.width = 640.0;
  rs.height = 480.0;
  for (int i = 0; i < n; ++i) {
    Region r;
    const double x1 = rng.uniform(0.0, 500.0);
    const double y1 = rng.uniform(0.0, 380.0);
    r.box = {x1, y1, x1 + rng.uniform(1.0, 140.0), y1 + rng.uniform(1.0, 100.0)};
    r.feat.resize(static_cast<size_t>(d_r));
    for (double& v : r.feat) v = rng.uniform(-1.0, 1.0);
    rs.regions.push_back(std::move(r));
  }
  return rs;
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double l2_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("geometry features") {
  SUBCASE("full-image box, conventional mode") {
    const auto c = geometry_features({0, 0, 100, 200}, 100, 200, GeometryMode::conventional);
    CHECK(c == std::array<double, 5>{0, 0, 1, 1, 1});
  }
  SUBCASE("degenerate box has zero area and is accepted") {
    const auto c = geometry_features({50, 10, 50, 80}, 100, 200, GeometryMode::conventional);
    CHECK(c[4] == 0.0);
  }
  SUBCASE("hand-evaluated box, conventional mode") {
    const auto c = geometry_features({10, 20, 30, 60}, 100, 200, GeometryMode::conventional);
    CHECK(c[0] == doctest::Approx(0.1));
    CHECK(c[1] == doctest::Approx(0.1));
    CHECK(c[2] == doctest::Approx(0.3));
    CHECK(c[3] == doctest::Approx(0.3));
    CHECK(c[4] == doctest::Approx(0.04));
  }
  SUBCASE("literal mode keeps the printed denominators") {
    const auto c = geometry_features({10, 20, 30, 60}, 100, 200, GeometryMode::paper_literal);
    CHECK(c[0] == doctest::Approx(10.0 / 100.0));
    CHECK(c[1] == doctest::Approx(20.0 / 100.0));  // y1 / W
    CHECK(c[2] == doctest::Approx(30.0 / 200.0));  // x2 / H
    CHECK(c[3] == doctest::Approx(60.0 / 200.0));
    CHECK(c[4] == doctest::Approx(0.04));
  }
  SUBCASE("zero width or height rejected") {
    CHECK_THROWS_AS(geometry_features({0, 0, 1, 1}, 0, 10, GeometryMode::conventional),
                    ArgumentError);
  }
}

TEST_CASE("spatial conditioning") {
  Rng rng(3);
  const TernConfig cfg = small_config();
  TernModel model(cfg, 16, 5);
  const RegionSet rs = random_region_set("img", 4, cfg.d_r, rng);
  const auto cond = model.spatial_condition(rs);
  CHECK(cond.size() == 4);
  for (const auto& v : cond) CHECK(static_cast<int>(v.size()) == cfg.d_visual);

  // Geometry enters the conditioned features: moving a box changes them.
  RegionSet moved = rs;
  moved.regions[0].box[0] += 5.0;
  const auto cond2 = model.spatial_condition(moved);
  CHECK(l2_dist(cond[0], cond2[0]) > 1e-8);
  CHECK(l2_dist(cond[1], cond2[1]) == 0.0);
}

TEST_CASE("encode_image contract") {
  Rng rng(11);
  const TernConfig cfg = small_config();
  TernModel model(cfg, 16, 5);

  SUBCASE("unit norm and dimension") {
    const RegionSet rs = random_region_set("img", 5, cfg.d_r, rng);
    const Embedding e = model.encode_image(rs);
    CHECK(static_cast<int>(e.vector.size()) == cfg.d_common);
    CHECK(std::abs(l2_norm(e.vector) - 1.0) < 1e-6);
    CHECK(e.source == EmbeddingSource::image);
    CHECK(e.id == "img");
  }
  SUBCASE("region order permutation leaves the embedding unchanged") {
    RegionSet rs = random_region_set("img", 6, cfg.d_r, rng);
    const Embedding a = model.encode_image(rs);
    std::swap(rs.regions[0], rs.regions[4]);
    std::swap(rs.regions[1], rs.regions[5]);
    const Embedding b = model.encode_image(rs);
    CHECK(l2_dist(a.vector, b.vector) < 1e-5);
  }
  SUBCASE("truncation keeps the highest-confidence head of the list") {
    TernConfig tc = cfg;
    tc.max_regions = 6;
    TernModel tmodel(tc, 16, 5);
    RegionSet big = random_region_set("img", 10, tc.d_r, rng);
    RegionSet head = big;
    head.regions.resize(6);
    const Embedding via_truncation = tmodel.encode_image(big);
    const Embedding direct = tmodel.encode_image(head);
    CHECK(via_truncation.vector == direct.vector);  // bit-exact
  }
  SUBCASE("translating all boxes changes the embedding") {
    Rng rng2(11);
    RegionSet base = random_region_set("img", 5, cfg.d_r, rng2);
    RegionSet shifted = base;
    for (Region& r : shifted.regions) {
      r.box[0] += 13.0;
      r.box[2] += 13.0;
    }
    const Embedding eb = model.encode_image(base);
    const Embedding es = model.encode_image(shifted);
    CHECK(l2_dist(eb.vector, es.vector) > 1e-6);
  }
  SUBCASE("errors: empty regions, bad feature dim") {
    RegionSet empty;
    empty.image_id = "x";
    empty.width = 10;
    empty.height = 10;
    CHECK_THROWS_AS(model.encode_image(empty), ArgumentError);

    RegionSet bad = random_region_set("img", 2, cfg.d_r + 1, rng);
    CHECK_THROWS_AS(model.encode_image(bad), ArgumentError);
  }
}

TEST_CASE("encode_caption contract") {
  const TernConfig cfg = small_config();
  TernModel model(cfg, 32, 5);

  SUBCASE("unit norm and dimension") {
    const TokenSequence ts{"cap", "img", {4, 5, 6, 7}};
    const Embedding e = model.encode_caption(ts);
    CHECK(static_cast<int>(e.vector.size()) == cfg.d_common);
    CHECK(std::abs(l2_norm(e.vector) - 1.0) < 1e-6);
    CHECK(e.source == EmbeddingSource::caption);
  }
  SUBCASE("different captions embed differently at init") {
    const Embedding a = model.encode_caption({"a", "i", {4, 5, 6}});
    const Embedding b = model.encode_caption({"b", "i", {7, 8, 9}});
    CHECK(l2_dist(a.vector, b.vector) > 1e-9);
  }
  SUBCASE("swapping two words changes the embedding (positions active)") {
    const Embedding a = model.encode_caption({"a", "i", {4, 5, 6}});
    const Embedding b = model.encode_caption({"b", "i", {6, 5, 4}});
    CHECK(l2_dist(a.vector, b.vector) > 0.0);
  }
  SUBCASE("errors: empty tokens, unknown id, overlong sequence") {
    CHECK_THROWS_AS(model.encode_caption({"c", "i", {}}), ArgumentError);
    CHECK_THROWS_AS(model.encode_caption({"c", "i", {32}}), ArgumentError);
    std::vector<int> long_seq(40, 4);
    CHECK_THROWS_AS(model.encode_caption({"c", "i", long_seq}), ArgumentError);
  }
}

TEST_CASE("shared layers are one physical set") {
  Rng rng(21);
  const TernConfig cfg = small_config();
  TernModel model(cfg, 16, 5);
  CHECK(model.shared_layers_identity_check());

  // An Adam step driven only by the image branch must be visible to a
  // subsequent text forward through the shared layers.
  const RegionSet rs = random_region_set("img", 3, cfg.d_r, rng);
  const TokenSequence ts{"cap", "img", {4, 5}};
  const Embedding text_before = model.encode_caption(ts);

  Graph g(Precision::f64);
  const auto img = model.encode_image_node(g, rs);
  g.backward(g.sum_all(img));
  // Zero every non-shared gradient so only shared layers move.
  for (const auto& p : model.params().all()) {
    if (p->name.rfind("shared.", 0) != 0) {
      std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
    }
  }
  AdamState adam;
  adam.lr = 0.05;
  adam_step(adam, model.params());
  model.params().zero_grads();

  const Embedding text_after = model.encode_caption(ts);
  CHECK(l2_dist(text_before.vector, text_after.vector) > 1e-9);
}

TEST_CASE("shared-weight gradient flow splits additively across branches") {
  Rng rng(31);
  const TernConfig cfg = small_config();
  TernModel model(cfg, 16, 5);
  const RegionSet rs = random_region_set("img", 3, cfg.d_r, rng);
  const TokenSequence ts{"cap", "img", {4, 5, 6}};

  const auto loss_both = [&](Graph& g) {
    const auto img = model.encode_image_node(g, rs);
    const auto cap = model.encode_caption_node(g, ts);
    return g.sum_all(g.mul(img, cap));  // cosine of unit embeddings
  };
  // Full loss gradient.
  model.params().zero_grads();
  {
    Graph g(Precision::f64);
    g.backward(loss_both(g));
  }
  std::vector<std::pair<std::string, std::vector<double>>> full;
  for (const auto& p : model.params().all()) {
    if (p->name.rfind("shared.", 0) == 0) full.emplace_back(p->name, p->grad.data);
  }

  // Image branch live with caption branch detached (constant), then the
  // reverse; the two gradients must sum to the full one.
  const Embedding cap_val = model.encode_caption(ts);
  const Embedding img_val = model.encode_image(rs);
  model.params().zero_grads();
  {
    Graph g(Precision::f64);
    const auto img = model.encode_image_node(g, rs);
    g.backward(g.sum_all(g.mul(img, g.constant(Tensor::row(cap_val.vector)))));
  }
  {
    Graph g(Precision::f64);
    const auto cap = model.encode_caption_node(g, ts);
    g.backward(g.sum_all(g.mul(g.constant(Tensor::row(img_val.vector)), cap)));
  }
  size_t idx = 0;
  for (const auto& p : model.params().all()) {
    if (p->name.rfind("shared.", 0) != 0) continue;
    const auto& [name, expect] = full[idx++];
    REQUIRE(name == p->name);
    for (size_t i = 0; i < expect.size(); ++i) {
      CHECK(std::abs(p->grad.data[i] - expect[i]) < 1e-10);
    }
  }
  CHECK(idx == full.size());
}

TEST_CASE("end-to-end gradient check on a 2-pair batch") {
  Rng rng(41);
  TernConfig cfg = small_config();
  cfg.n_text_te = 0;
  TernModel model(cfg, 16, 5);
  const RegionSet rs0 = random_region_set("i0", 3, cfg.d_r, rng);
  const RegionSet rs1 = random_region_set("i1", 2, cfg.d_r, rng);
  const TokenSequence ts0{"c0", "i0", {4, 5, 6}};
  const TokenSequence ts1{"c1", "i1", {7, 8}};

  std::vector<Parameter*> params;
  for (const auto& p : model.params().all()) params.push_back(p.get());

  const auto build = [&](Graph& g) {
    const std::array<Graph::NodeId, 2> imgs = {model.encode_image_node(g, rs0),
                                               model.encode_image_node(g, rs1)};
    const std::array<Graph::NodeId, 2> caps = {model.encode_caption_node(g, ts0),
                                               model.encode_caption_node(g, ts1)};
    const auto s = g.matmul(g.concat_rows(imgs), g.transpose(g.concat_rows(caps)));
    return triplet_loss_node(g, s, 0.2, Reduction::sum);
  };
  const auto report = check_gradients(build, params, 1e-5, 60, rng);
  CHECK(report.coords_checked == 60);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("sinusoidal positional encoding") {
  const Tensor pe = sinusoidal_positional_encoding(4, 6);
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(pe.at(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(pe.at(1, 1) == doctest::Approx(std::cos(1.0)));
  CHECK(pe.at(2, 2) == doctest::Approx(std::sin(2.0 / std::pow(10000.0, 2.0 / 6.0))));
}
