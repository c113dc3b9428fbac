#include "tern/autodiff.hpp"

#include <cmath>

#include "tern/error.hpp"

namespace tern {

namespace {
constexpr double kMaskOffset = -1e9;
}

Parameter& ParamStore::create(const std::string& name, Tensor init) {
  if (index_.count(name) != 0) {
    throw ArgumentError("duplicate parameter name: " + name);
  }
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
  return *params_.back();
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

void ParamStore::zero_grads() {
  for (auto& p : params_) {
    std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
  }
}

Graph::NodeId Graph::push(Tensor value, std::vector<NodeId> parents,
                          std::function<void(Graph&, NodeId)> backward, Parameter* bound) {
  quantize(value, precision_);
  Node n;
  n.value = std::move(value);
  n.grad = Tensor::zeros(n.value.shape);
  n.parents = std::move(parents);
  n.backward = std::move(backward);
  n.bound = bound;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::accumulate_grad(NodeId id, const Tensor& g) {
  Tensor& dst = nodes_[static_cast<size_t>(id)].grad;
  if (!dst.same_shape(g)) throw ArgumentError("gradient shape mismatch");
  for (size_t i = 0; i < dst.data.size(); ++i) {
    dst.data[i] = quantized(dst.data[i] + g.data[i], precision_);
  }
}

Graph::NodeId Graph::constant(Tensor value) { return push(std::move(value), {}, nullptr); }

Graph::NodeId Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return it->second;
  const NodeId id = push(p.value, {}, nullptr, &p);
  param_nodes_[&p] = id;
  return id;
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) throw ArgumentError("add: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
  return push(std::move(out), {a, b}, [a, b](Graph& g, NodeId self) {
    g.accumulate_grad(a, g.grad(self));
    g.accumulate_grad(b, g.grad(self));
  });
}

Graph::NodeId Graph::sub(NodeId a, NodeId b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) throw ArgumentError("sub: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
  return push(std::move(out), {a, b}, [a, b](Graph& g, NodeId self) {
    g.accumulate_grad(a, g.grad(self));
    Tensor neg = g.grad(self);
    for (double& v : neg.data) v = -v;
    g.accumulate_grad(b, neg);
  });
}

Graph::NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) throw ArgumentError("mul: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
  return push(std::move(out), {a, b}, [a, b](Graph& g, NodeId self) {
    const Tensor& go = g.grad(self);
    Tensor da = g.value(b);
    for (size_t i = 0; i < da.data.size(); ++i) da.data[i] *= go.data[i];
    g.accumulate_grad(a, da);
    Tensor db = g.value(a);
    for (size_t i = 0; i < db.data.size(); ++i) db.data[i] *= go.data[i];
    g.accumulate_grad(b, db);
  });
}

Graph::NodeId Graph::scale(NodeId a, double c) {
  Tensor out = val(a);
  for (double& v : out.data) v *= c;
  return push(std::move(out), {a}, [a, c](Graph& g, NodeId self) {
    Tensor da = g.grad(self);
    for (double& v : da.data) v *= c;
    g.accumulate_grad(a, da);
  });
}

Graph::NodeId Graph::add_row(NodeId m, NodeId row) {
  const Tensor& tm = val(m);
  const Tensor& tr = val(row);
  if (tm.rank() != 2 || tr.rank() != 2 || tr.rows() != 1 || tr.cols() != tm.cols()) {
    throw ArgumentError("add_row: expected matrix and 1 x cols row");
  }
  Tensor out = tm;
  for (int r = 0; r < tm.rows(); ++r) {
    for (int c = 0; c < tm.cols(); ++c) out.at(r, c) += tr.at(0, c);
  }
  return push(std::move(out), {m, row}, [m, row](Graph& g, NodeId self) {
    const Tensor& go = g.grad(self);
    g.accumulate_grad(m, go);
    Tensor dr = Tensor::zeros({1, go.cols()});
    for (int r = 0; r < go.rows(); ++r) {
      for (int c = 0; c < go.cols(); ++c) dr.at(0, c) += go.at(r, c);
    }
    g.accumulate_grad(row, dr);
  });
}

Graph::NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
    throw ArgumentError("matmul: inner dimensions do not agree");
  }
  const int n = ta.rows(), k = ta.cols(), m = tb.cols();
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < n; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double av = ta.at(i, kk);
      if (av == 0.0) continue;
      const double* brow = tb.data.data() + static_cast<size_t>(kk) * m;
      double* orow = out.data.data() + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return push(std::move(out), {a, b}, [a, b, n, k, m](Graph& g, NodeId self) {
    const Tensor& go = g.grad(self);
    const Tensor& ta2 = g.value(a);
    const Tensor& tb2 = g.value(b);
    // dA = dY  B^T
    Tensor da = Tensor::zeros({n, k});
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        const double gv = go.at(i, j);
        if (gv == 0.0) continue;
        for (int kk = 0; kk < k; ++kk) da.at(i, kk) += gv * tb2.at(kk, j);
      }
    }
    g.accumulate_grad(a, da);
    // dB = A^T dY
    Tensor db = Tensor::zeros({k, m});
    for (int i = 0; i < n; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const double av = ta2.at(i, kk);
        if (av == 0.0) continue;
        for (int j = 0; j < m; ++j) db.at(kk, j) += av * go.at(i, j);
      }
    }
    g.accumulate_grad(b, db);
  });
}

Graph::NodeId Graph::transpose(NodeId a) {
  const Tensor& ta = val(a);
  if (ta.rank() != 2) throw ArgumentError("transpose: tensor is not rank 2");
  const int r = ta.rows(), c = ta.cols();
  Tensor out = Tensor::zeros({c, r});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out.at(j, i) = ta.at(i, j);
  }
  return push(std::move(out), {a}, [a, r, c](Graph& g, NodeId self) {
    const Tensor& go = g.grad(self);
    Tensor da = Tensor::zeros({r, c});
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) da.at(i, j) = go.at(j, i);
    }
    g.accumulate_grad(a, da);
  });
}

Graph::NodeId Graph::relu(NodeId a) {
  Tensor out = val(a);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), {a}, [a](Graph& g, NodeId self) {
    const Tensor& go = g.grad(self);
    Tensor da = g.value(a);
    for (size_t i = 0; i < da.data.size(); ++i) {
      da.data[i] = da.data[i] > 0.0 ? go.data[i] : 0.0;
    }
    g.accumulate_grad(a, da);
  });
}

Graph::NodeId Graph::softmax_rows(NodeId a, const std::vector<uint8_t>* valid_cols) {
  const Tensor& ta = val(a);
  if (ta.rank() != 2) throw ArgumentError("softmax_rows: tensor is not rank 2");
  const int r = ta.rows(), c = ta.cols();
  std::vector<uint8_t> valid;
  if (valid_cols != nullptr) {
    if (static_cast<int>(valid_cols->size()) != c) {
      throw ArgumentError("softmax_rows: mask length does not match columns");
    }
    valid = *valid_cols;
    bool any = false;
    for (uint8_t v : valid) any = any || (v != 0);
    if (!any) throw ArgumentError("softmax_rows: all positions masked");
  } else {
    valid.assign(static_cast<size_t>(c), 1);
  }

  Tensor out = Tensor::zeros({r, c});
  for (int i = 0; i < r; ++i) {
    double mx = -1e308;
    for (int j = 0; j < c; ++j) {
      const double logit = ta.at(i, j) + (valid[j] ? 0.0 : kMaskOffset);
      mx = std::max(mx, logit);
    }
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      const double logit = ta.at(i, j) + (valid[j] ? 0.0 : kMaskOffset);
      const double e = std::exp(logit - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < c; ++j) out.at(i, j) /= sum;
  }
  return push(std::move(out), {a}, [a](Graph& g, NodeId self) {
    const Tensor& y = g.value(self);
    const Tensor& go = g.grad(self);
    const int rr = y.rows(), cc = y.cols();
    Tensor da = Tensor::zeros({rr, cc});
    for (int i = 0; i < rr; ++i) {
      double dot = 0.0;
      for (int j = 0; j < cc; ++j) dot += go.at(i, j) * y.at(i, j);
      for (int j = 0; j < cc; ++j) da.at(i, j) = y.at(i, j) * (go.at(i, j) - dot);
    }
    g.accumulate_grad(a, da);
  });
}

Graph::NodeId Graph::layer_norm_rows(NodeId x, NodeId gain, NodeId bias, double eps) {
  const Tensor& tx = val(x);
  if (tx.rank() != 2) throw ArgumentError("layer_norm_rows: tensor is not rank 2");
  const int r = tx.rows(), d = tx.cols();
  const Tensor& tg = val(gain);
  const Tensor& tb = val(bias);
  if (tg.numel() != d || tb.numel() != d) {
    throw ArgumentError("layer_norm_rows: gain/bias size must match last-axis size");
  }
  Tensor out = Tensor::zeros({r, d});
  std::vector<double> inv_std(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += tx.at(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (tx.at(i, j) - mean) * (tx.at(i, j) - mean);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = inv;
    for (int j = 0; j < d; ++j) {
      out.at(i, j) = tg.data[static_cast<size_t>(j)] * (tx.at(i, j) - mean) * inv +
                     tb.data[static_cast<size_t>(j)];
    }
  }
  return push(std::move(out), {x, gain, bias},
              [x, gain, bias, eps, inv_std](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                const Tensor& tx2 = g.value(x);
                const Tensor& tg2 = g.value(gain);
                const int rr = tx2.rows(), d2 = tx2.cols();
                Tensor dx = Tensor::zeros({rr, d2});
                Tensor dgain = Tensor::zeros(g.value(gain).shape);
                Tensor dbias = Tensor::zeros(g.value(bias).shape);
                for (int i = 0; i < rr; ++i) {
                  double mean = 0.0;
                  for (int j = 0; j < d2; ++j) mean += tx2.at(i, j);
                  mean /= d2;
                  const double inv = inv_std[static_cast<size_t>(i)];
                  // xhat, dxhat, and the two row means needed by d(x)
                  double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                  std::vector<double> xhat(static_cast<size_t>(d2)), dxhat(static_cast<size_t>(d2));
                  for (int j = 0; j < d2; ++j) {
                    xhat[static_cast<size_t>(j)] = (tx2.at(i, j) - mean) * inv;
                    dxhat[static_cast<size_t>(j)] = go.at(i, j) * tg2.data[static_cast<size_t>(j)];
                    mean_dxhat += dxhat[static_cast<size_t>(j)];
                    mean_dxhat_xhat += dxhat[static_cast<size_t>(j)] * xhat[static_cast<size_t>(j)];
                  }
                  mean_dxhat /= d2;
                  mean_dxhat_xhat /= d2;
                  for (int j = 0; j < d2; ++j) {
                    dx.at(i, j) = inv * (dxhat[static_cast<size_t>(j)] - mean_dxhat -
                                         xhat[static_cast<size_t>(j)] * mean_dxhat_xhat);
                    dgain.data[static_cast<size_t>(j)] += go.at(i, j) * xhat[static_cast<size_t>(j)];
                    dbias.data[static_cast<size_t>(j)] += go.at(i, j);
                  }
                }
                g.accumulate_grad(x, dx);
                g.accumulate_grad(gain, dgain);
                g.accumulate_grad(bias, dbias);
              });
}

Graph::NodeId Graph::concat_cols(std::span<const NodeId> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no parts");
  const int r = val(parts[0]).rows();
  int total = 0;
  for (NodeId p : parts) {
    const Tensor& t = val(p);
    if (t.rank() != 2 || t.rows() != r) throw ArgumentError("concat_cols: row count mismatch");
    total += t.cols();
  }
  Tensor out = Tensor::zeros({r, total});
  int off = 0;
  for (NodeId p : parts) {
    const Tensor& t = val(p);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < t.cols(); ++j) out.at(i, off + j) = t.at(i, j);
    }
    off += t.cols();
  }
  std::vector<NodeId> parents(parts.begin(), parts.end());
  return push(std::move(out), parents, [parents](Graph& g, NodeId self) {
    const Tensor& go = g.grad(self);
    int off2 = 0;
    for (NodeId p : parents) {
      const Tensor& t = g.value(p);
      Tensor dp = Tensor::zeros(t.shape);
      for (int i = 0; i < t.rows(); ++i) {
        for (int j = 0; j < t.cols(); ++j) dp.at(i, j) = go.at(i, off2 + j);
      }
      g.accumulate_grad(p, dp);
      off2 += t.cols();
    }
  });
}

Graph::NodeId Graph::concat_rows(std::span<const NodeId> parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no parts");
  const int c = val(parts[0]).cols();
  int total = 0;
  for (NodeId p : parts) {
    const Tensor& t = val(p);
    if (t.rank() != 2 || t.cols() != c) throw ArgumentError("concat_rows: column count mismatch");
    total += t.rows();
  }
  Tensor out = Tensor::zeros({total, c});
  int off = 0;
  for (NodeId p : parts) {
    const Tensor& t = val(p);
    for (int i = 0; i < t.rows(); ++i) {
      for (int j = 0; j < c; ++j) out.at(off + i, j) = t.at(i, j);
    }
    off += t.rows();
  }
  std::vector<NodeId> parents(parts.begin(), parts.end());
  return push(std::move(out), parents, [parents](Graph& g, NodeId self) {
    const Tensor& go = g.grad(self);
    int off2 = 0;
    for (NodeId p : parents) {
      const Tensor& t = g.value(p);
      Tensor dp = Tensor::zeros(t.shape);
      for (int i = 0; i < t.rows(); ++i) {
        for (int j = 0; j < t.cols(); ++j) dp.at(i, j) = go.at(off2 + i, j);
      }
      g.accumulate_grad(p, dp);
      off2 += t.rows();
    }
  });
}

Graph::NodeId Graph::select_row(NodeId m, int row) {
  const Tensor& tm = val(m);
  if (tm.rank() != 2 || row < 0 || row >= tm.rows()) {
    throw ArgumentError("select_row: row index out of range");
  }
  Tensor out = Tensor::zeros({1, tm.cols()});
  for (int j = 0; j < tm.cols(); ++j) out.at(0, j) = tm.at(row, j);
  return push(std::move(out), {m}, [m, row](Graph& g, NodeId self) {
    const Tensor& go = g.grad(self);
    Tensor dm = Tensor::zeros(g.value(m).shape);
    for (int j = 0; j < go.cols(); ++j) dm.at(row, j) = go.at(0, j);
    g.accumulate_grad(m, dm);
  });
}

Graph::NodeId Graph::gather_rows(NodeId table, std::vector<int> ids) {
  const Tensor& tt = val(table);
  if (tt.rank() != 2) throw ArgumentError("gather_rows: table is not rank 2");
  for (int id : ids) {
    if (id < 0 || id >= tt.rows()) {
      throw ArgumentError("gather_rows: row id " + std::to_string(id) + " out of range");
    }
  }
  const int d = tt.cols();
  Tensor out = Tensor::zeros({static_cast<int>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    for (int j = 0; j < d; ++j) out.at(static_cast<int>(i), j) = tt.at(ids[i], j);
  }
  return push(std::move(out), {table}, [table, ids](Graph& g, NodeId self) {
    const Tensor& go = g.grad(self);
    Tensor dt = Tensor::zeros(g.value(table).shape);
    for (size_t i = 0; i < ids.size(); ++i) {
      for (int j = 0; j < go.cols(); ++j) dt.at(ids[i], j) += go.at(static_cast<int>(i), j);
    }
    g.accumulate_grad(table, dt);
  });
}

Graph::NodeId Graph::l2_normalize_rows(NodeId m) {
  const Tensor& tm = val(m);
  if (tm.rank() != 2) throw ArgumentError("l2_normalize_rows: tensor is not rank 2");
  const int r = tm.rows(), c = tm.cols();
  Tensor out = Tensor::zeros({r, c});
  std::vector<double> norms(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    double sq = 0.0;
    for (int j = 0; j < c; ++j) sq += tm.at(i, j) * tm.at(i, j);
    const double n = std::sqrt(sq);
    if (n == 0.0) throw ArgumentError("l2_normalize_rows: zero-norm row");
    norms[static_cast<size_t>(i)] = n;
    for (int j = 0; j < c; ++j) out.at(i, j) = tm.at(i, j) / n;
  }
  return push(std::move(out), {m}, [m, norms](Graph& g, NodeId self) {
    const Tensor& y = g.value(self);
    const Tensor& go = g.grad(self);
    const int rr = y.rows(), cc = y.cols();
    Tensor dm = Tensor::zeros({rr, cc});
    for (int i = 0; i < rr; ++i) {
      double dot = 0.0;
      for (int j = 0; j < cc; ++j) dot += go.at(i, j) * y.at(i, j);
      const double inv = 1.0 / norms[static_cast<size_t>(i)];
      for (int j = 0; j < cc; ++j) dm.at(i, j) = (go.at(i, j) - dot * y.at(i, j)) * inv;
    }
    g.accumulate_grad(m, dm);
  });
}

Graph::NodeId Graph::sum_all(NodeId a) {
  const Tensor& ta = val(a);
  double s = 0.0;
  for (double v : ta.data) s += v;
  return push(Tensor::scalar(s), {a}, [a](Graph& g, NodeId self) {
    const double gv = g.grad(self).data[0];
    Tensor da = Tensor::full(g.value(a).shape, gv);
    g.accumulate_grad(a, da);
  });
}

Graph::NodeId Graph::dropout(NodeId a, double rate) {
  if (!training_ || rate <= 0.0) return a;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  if (rng_ == nullptr) throw ConfigError("dropout in training mode requires an RNG");
  const Tensor& ta = val(a);
  const double keep = 1.0 - rate;
  std::vector<double> mask(ta.data.size());
  for (double& mv : mask) mv = (rng_->uniform() >= rate) ? 1.0 / keep : 0.0;
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask[i];
  return push(std::move(out), {a}, [a, mask](Graph& g, NodeId self) {
    const Tensor& go = g.grad(self);
    Tensor da = go;
    for (size_t i = 0; i < da.data.size(); ++i) da.data[i] *= mask[i];
    g.accumulate_grad(a, da);
  });
}

Graph::NodeId Graph::make_node(Tensor value, std::vector<NodeId> parents,
                               std::function<void(Graph&, NodeId)> backward) {
  return push(std::move(value), std::move(parents), std::move(backward));
}

void Graph::backward(NodeId loss) {
  if (loss < 0 || static_cast<size_t>(loss) >= nodes_.size()) {
    throw ArgumentError("backward: invalid loss node");
  }
  Node& ln = nodes_[static_cast<size_t>(loss)];
  if (ln.value.numel() != 1) throw ArgumentError("backward: loss must be scalar");
  if (!ln.value.all_finite()) throw NumericError("backward: loss is not finite");
  ln.grad.data[0] = 1.0;
  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.backward) n.backward(*this, id);
  }
  for (auto& [p, id] : param_nodes_) {
    const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
    Parameter* param = nodes_[static_cast<size_t>(id)].bound;
    for (size_t i = 0; i < g.data.size(); ++i) {
      param->grad.data[i] = quantized(param->grad.data[i] + g.data[i], precision_);
    }
  }
}

}  // namespace tern
