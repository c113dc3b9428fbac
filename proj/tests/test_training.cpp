#include <cmath>
#include <sstream>

#include <doctest.h>

#include "oracles.hpp"
#include "tern/error.hpp"
#include "tern/model.hpp"
#include "tern/training.hpp"

using namespace tern;

namespace {

SimilarityMatrix make_sim(int b, std::vector<double> values) {
  SimilarityMatrix s;
  s.size = b;
  s.values = std::move(values);
  return s;
}

Embedding unit_emb(const std::string& id, EmbeddingSource src, std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return Embedding{id, src, std::move(v)};
}

TernConfig tiny_config() {
  TernConfig c;
  c.d_r = 6;
  c.d_visual = 8;
  c.d_text = 8;
  c.d_common = 8;
  c.n_visual_te = 1;
  c.n_text_te = 0;
  c.n_shared_te = 1;
  c.d_ff = 16;
  c.dropout = 0.0;
  c.heads = 2;
  c.max_seq_len = 32;
  c.precision = Precision::f64;
  return c;
}

PairedDataset tiny_dataset(int n_images, int caps_per_image, const TernConfig& cfg, uint64_t seed) {
  GenConfig gen;
  gen.seed = seed;
  gen.n_train = n_images;
  gen.captions_per_image = caps_per_image;
  gen.n_regions = 3;
  gen.d_r = cfg.d_r;
  gen.vocab_size = 10;
  const SyntheticDataset ds = gen_synthetic_dataset(gen);
  std::vector<std::string> texts;
  for (const auto& c : ds.captions) texts.push_back(c.text);
  const Vocabulary vocab = Vocabulary::build(texts);
  const DatasetSplit split = make_split("train", ds.image_splits, ds.captions);
  return build_paired_dataset(ds.images, ds.captions, split, vocab);
}

}  // namespace

TEST_CASE("cosine similarity") {
  const std::vector<double> a = {1.0, 2.0, -1.0};
  const std::vector<double> ex = {1.0, 0.0}, ey = {0.0, 3.0}, diag = {1.0, 1.0};
  const std::vector<double> zero = {0.0, 0.0}, one = {1.0};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cosine_similarity(ex, ey) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(cosine_similarity(ex, diag) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_similarity(zero, diag), ArgumentError);
  CHECK_THROWS_AS(cosine_similarity(one, diag), ArgumentError);
}

TEST_CASE("similarity matrix") {
  SUBCASE("B=1 self-similarity") {
    const auto e = unit_emb("a", EmbeddingSource::image, {1.0, 2.0});
    const auto c = unit_emb("a#0", EmbeddingSource::caption, {1.0, 2.0});
    const SimilarityMatrix s = similarity_matrix({e}, {c});
    CHECK(s.size == 1);
    CHECK(s.at(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("identical unit embeddings give the all-ones matrix") {
    const auto e = unit_emb("x", EmbeddingSource::image, {3.0, 4.0});
    const SimilarityMatrix s = similarity_matrix({e, e, e}, {e, e, e});
    for (double v : s.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("random 3x3 matches the per-pair oracle") {
    Rng rng(7);
    std::vector<Embedding> imgs, caps;
    for (int i = 0; i < 3; ++i) {
      imgs.push_back(unit_emb("i" + std::to_string(i), EmbeddingSource::image,
                              {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}));
      caps.push_back(unit_emb("c" + std::to_string(i), EmbeddingSource::caption,
                              {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}));
    }
    const SimilarityMatrix s = similarity_matrix(imgs, caps);
    for (int i = 0; i < 3; ++i) {
      for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(s.at(i, c) - cosine_similarity(imgs[i].vector, caps[c].vector)) < 1e-10);
        CHECK(s.at(i, c) >= -1.0 - 1e-6);
        CHECK(s.at(i, c) <= 1.0 + 1e-6);
      }
    }
  }
  SUBCASE("batch mismatch rejected") {
    const auto e = unit_emb("x", EmbeddingSource::image, {1.0});
    CHECK_THROWS_AS(similarity_matrix({e, e}, {e}), ArgumentError);
  }
}

TEST_CASE("triplet loss with hard negatives") {
  SUBCASE("well-separated matrix has zero loss") {
    const auto s = make_sim(2, {0.9, 0.1, 0.2, 0.8});
    CHECK(triplet_loss_hard_negatives(s, 0.2, Reduction::sum) == 0.0);
  }
  SUBCASE("hand-derived 2x2 case sums to 0.8") {
    const auto s = make_sim(2, {0.5, 0.6, 0.4, 0.5});
    CHECK(triplet_loss_hard_negatives(s, 0.2, Reduction::sum) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(triplet_loss_hard_negatives(s, 0.2, Reduction::mean) ==
          doctest::Approx(0.4).epsilon(1e-12));
  }
  SUBCASE("diagonal dominance by the margin gives exactly zero") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      const int b = rng.uniform_int(2, 6);
      SimilarityMatrix s;
      s.size = b;
      s.values.assign(static_cast<size_t>(b) * b, 0.0);
      for (int i = 0; i < b; ++i) {
        for (int c = 0; c < b; ++c) s.at(i, c) = i == c ? 0.9 : rng.uniform(-0.5, 0.9 - 0.21);
      }
      CHECK(triplet_loss_hard_negatives(s, 0.2, Reduction::sum) == 0.0);
    }
  }
  SUBCASE("B=1 has no negatives") {
    CHECK(triplet_loss_hard_negatives(make_sim(1, {0.3}), 0.2, Reduction::sum) == 0.0);
  }
  SUBCASE("matches the brute-force oracle on random matrices") {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
      const int b = 5;
      std::vector<std::vector<double>> rows(b, std::vector<double>(b));
      std::vector<double> flat;
      for (auto& row : rows) {
        for (double& v : row) {
          v = rng.uniform(-1.0, 1.0);
          flat.push_back(v);
        }
      }
      const double got = triplet_loss_hard_negatives(make_sim(b, flat), 0.2, Reduction::sum);
      const double expect = oracle::triplet_loss_direct(rows, 0.2, false);
      CHECK(std::abs(got - expect) < 1e-10);
    }
  }
  SUBCASE("loss is non-negative") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> flat(9);
      for (double& v : flat) v = rng.uniform(-1, 1);
      CHECK(triplet_loss_hard_negatives(make_sim(3, flat), 0.2, Reduction::sum) >= 0.0);
    }
  }
  SUBCASE("raising an off-diagonal entry never lowers the loss") {
    Rng rng(19);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> flat(16);
      for (double& v : flat) v = rng.uniform(-1, 1);
      const auto s = make_sim(4, flat);
      const double base = triplet_loss_hard_negatives(s, 0.2, Reduction::sum);
      auto bumped = s;
      int i = rng.uniform_int(0, 3), c = rng.uniform_int(0, 3);
      if (i == c) c = (c + 1) % 4;
      bumped.at(i, c) += rng.uniform(0.0, 0.5);
      CHECK(triplet_loss_hard_negatives(bumped, 0.2, Reduction::sum) >= base - 1e-12);
    }
  }
  SUBCASE("adding a constant leaves the selected hard negatives unchanged") {
    Rng rng(23);
    for (int trial = 0; trial < 25; ++trial) {
      std::vector<double> flat(16);
      for (double& v : flat) v = rng.uniform(-1, 1);
      // Selection shows up through the gradient pattern.
      Graph g1, g2;
      const auto s1 = g1.constant(Tensor::matrix(4, 4, flat));
      std::vector<double> shifted = flat;
      for (double& v : shifted) v += 0.37;
      const auto s2 = g2.constant(Tensor::matrix(4, 4, shifted));
      g1.backward(triplet_loss_node(g1, s1, 5.0, Reduction::sum));
      g2.backward(triplet_loss_node(g2, s2, 5.0, Reduction::sum));
      // Large alpha keeps every hinge active, so gradients expose the argmax.
      CHECK(g1.grad(s1).data == g2.grad(s2).data);
    }
  }
  SUBCASE("tie-break picks the lowest index") {
    Graph g;
    const auto s = g.constant(Tensor::matrix(3, 3, {0.5, 0.4, 0.4, 0.1, 0.5, 0.1, 0.1, 0.1, 0.5}));
    g.backward(triplet_loss_node(g, s, 0.2, Reduction::sum));
    // Pair 0's caption hard negative ties between columns 1 and 2 and must
    // resolve to column 1. Column 1 then collects that term plus pair 1's
    // image-negative term; column 2 only collects pair 2's.
    CHECK(g.grad(s).at(0, 1) == 2.0);
    CHECK(g.grad(s).at(0, 2) == 1.0);
  }
  SUBCASE("non-square matrix rejected") {
    SimilarityMatrix s;
    s.size = 2;
    s.values = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(triplet_loss_hard_negatives(s, 0.2, Reduction::sum), ArgumentError);
  }
}

TEST_CASE("triplet loss gradient matches finite differences away from ties") {
  Rng rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> flat(16);
    for (double& v : flat) v = rng.uniform(-1.0, 1.0);
    Graph g;
    const auto s = g.constant(Tensor::matrix(4, 4, flat));
    g.backward(triplet_loss_node(g, s, 0.2, Reduction::sum));
    const Tensor analytic = g.grad(s);
    for (int i = 0; i < 16; ++i) {
      const double eps = 1e-6;
      std::vector<double> up = flat, dn = flat;
      up[static_cast<size_t>(i)] += eps;
      dn[static_cast<size_t>(i)] -= eps;
      const double lu = triplet_loss_hard_negatives(make_sim(4, up), 0.2, Reduction::sum);
      const double ld = triplet_loss_hard_negatives(make_sim(4, dn), 0.2, Reduction::sum);
      const double numeric = (lu - ld) / (2.0 * eps);
      // Skip coordinates that straddle a hinge or argmax boundary.
      const double lu2 = triplet_loss_hard_negatives(make_sim(4, up), 0.2 + 2e-6, Reduction::sum);
      const double ld2 = triplet_loss_hard_negatives(make_sim(4, dn), 0.2 - 2e-6, Reduction::sum);
      if (std::abs((lu2 - lu) - 2e-6 * 8) > 1e-9 && std::abs((ld2 - ld) + 2e-6 * 8) > 1e-9) {
        continue;
      }
      CHECK(std::abs(analytic.data[static_cast<size_t>(i)] - numeric) < 1e-6);
    }
  }
}

TEST_CASE("train_epoch") {
  const TernConfig cfg = tiny_config();
  TrainConfig tc;
  tc.alpha = 0.2;
  tc.batch_size = 4;
  tc.lr = 1e-3;
  tc.seed = 11;

  SUBCASE("empty dataset: zero loss, no parameter change") {
    TernModel model(cfg, 16, 3);
    PairedDataset empty;
    AdamState adam;
    std::vector<double> before;
    for (const auto& p : model.params().all()) {
      before.insert(before.end(), p->value.data.begin(), p->value.data.end());
    }
    CHECK(train_epoch(model, empty, tc, adam, 0) == 0.0);
    std::vector<double> after;
    for (const auto& p : model.params().all()) {
      after.insert(after.end(), p->value.data.begin(), p->value.data.end());
    }
    CHECK(before == after);
    CHECK(adam.step == 0);
  }
  SUBCASE("identical seed and fresh model repeat the epoch bit-exactly") {
    const PairedDataset data = tiny_dataset(6, 2, cfg, 5);
    TernModel m1(cfg, 64, 3), m2(cfg, 64, 3);
    AdamState a1, a2;
    const double l1 = train_epoch(m1, data, tc, a1, 0);
    const double l2 = train_epoch(m2, data, tc, a2, 0);
    CHECK(l1 == l2);
    for (size_t i = 0; i < m1.params().all().size(); ++i) {
      CHECK(m1.params().all()[i]->value.data == m2.params().all()[i]->value.data);
    }
  }
  SUBCASE("a batch of one is skipped with a warning") {
    const PairedDataset full = tiny_dataset(5, 1, cfg, 7);
    TrainConfig tc1 = tc;
    tc1.batch_size = 4;  // 5 pairs -> batch of 4 plus a leftover of 1
    TernModel model(cfg, 64, 3);
    AdamState adam;
    std::ostringstream log;
    train_epoch(model, full, tc1, adam, 0, &log);
    CHECK(log.str().find("batch_of_one_skipped") != std::string::npos);
    CHECK(adam.step == 1);  // only the full batch stepped
  }
}

TEST_CASE("vocabulary mismatch in encode raises argument error") {
  const TernConfig cfg = tiny_config();
  TernModel model(cfg, 4, 3);  // vocab of 4: ids 0..3
  CHECK_THROWS_AS(model.encode_caption({"c", "i", {9}}), ArgumentError);
}
