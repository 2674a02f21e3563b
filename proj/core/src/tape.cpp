#include "psst/tape.hpp"

#include <algorithm>
#include <cmath>

namespace psst::ad {

namespace {

double checked(double x, const char* op) {
  if (!std::isfinite(x)) {
    throw NumericError(std::string(op) + ": produced a non-finite value");
  }
  return x;
}

}  // namespace

Node* Tape::emplace(Tensor value, bool rg) {
  if (!value.all_finite()) {
    throw NumericError("tape: non-finite value entering the graph");
  }
  nodes_.emplace_back(std::move(value), rg);
  return &nodes_.back();
}

Node* Tape::leaf(Tensor value, bool requires_grad) {
  return emplace(std::move(value), requires_grad);
}

void Tape::check_same_shape(const Node* a, const Node* b, const char* op) {
  if (!a->value.same_shape(b->value)) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     a->value.shape_string() + " vs " +
                     b->value.shape_string());
  }
}

Node* Tape::add(Node* a, Node* b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  Node* n = emplace(std::move(out), a->requires_grad || b->requires_grad);
  for (Node* p : {a, b}) {
    if (p->requires_grad) {
      n->parents.push_back({p, [](const Tensor& g, Tensor& pg) {
                              for (std::size_t i = 0; i < g.numel(); ++i)
                                pg[i] += g[i];
                            }});
    }
  }
  return n;
}

Node* Tape::sub(Node* a, Node* b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  Node* n = emplace(std::move(out), a->requires_grad || b->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i)
                              pg[i] += g[i];
                          }});
  }
  if (b->requires_grad) {
    n->parents.push_back({b, [](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i)
                              pg[i] -= g[i];
                          }});
  }
  return n;
}

Node* Tape::mul(Node* a, Node* b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  Node* n = emplace(std::move(out), a->requires_grad || b->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [b](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i)
                              pg[i] += g[i] * b->value[i];
                          }});
  }
  if (b->requires_grad) {
    n->parents.push_back({b, [a](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i)
                              pg[i] += g[i] * a->value[i];
                          }});
  }
  return n;
}

Node* Tape::scale(Node* a, double s) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = checked(out[i] * s, "scale");
  Node* n = emplace(std::move(out), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [s](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i)
                              pg[i] += g[i] * s;
                          }});
  }
  return n;
}

Node* Tape::add_scalar(Node* a, double s) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = checked(out[i] + s, "add_scalar");
  Node* n = emplace(std::move(out), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i)
                              pg[i] += g[i];
                          }});
  }
  return n;
}

Node* Tape::add_n(const std::vector<Node*>& terms) {
  if (terms.empty()) throw ContractError("add_n: no terms");
  Tensor out = terms[0]->value;
  bool rg = terms[0]->requires_grad;
  for (std::size_t t = 1; t < terms.size(); ++t) {
    check_same_shape(terms[0], terms[t], "add_n");
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += terms[t]->value[i];
    rg = rg || terms[t]->requires_grad;
  }
  Node* n = emplace(std::move(out), rg);
  for (Node* p : terms) {
    if (p->requires_grad) {
      n->parents.push_back({p, [](const Tensor& g, Tensor& pg) {
                              for (std::size_t i = 0; i < g.numel(); ++i)
                                pg[i] += g[i];
                            }});
    }
  }
  return n;
}

Node* Tape::matmul(Node* a, Node* b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: incompatible shapes " + av.shape_string() +
                     " x " + bv.shape_string());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double aval = av.at(i, l);
      if (aval == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aval * bv.at(l, j);
    }
  }
  Node* node = emplace(std::move(out), a->requires_grad || b->requires_grad);
  if (a->requires_grad) {
    // a.grad += g . b^T
    node->parents.push_back({a, [b, m, k, n](const Tensor& g, Tensor& pg) {
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t l = 0; l < k; ++l) {
                                   double acc = 0.0;
                                   for (std::size_t j = 0; j < n; ++j)
                                     acc += g.at(i, j) * b->value.at(l, j);
                                   pg.at(i, l) += acc;
                                 }
                             }});
  }
  if (b->requires_grad) {
    // b.grad += a^T . g
    node->parents.push_back({b, [a, m, k, n](const Tensor& g, Tensor& pg) {
                               for (std::size_t l = 0; l < k; ++l)
                                 for (std::size_t i = 0; i < m; ++i) {
                                   const double aval = a->value.at(i, l);
                                   if (aval == 0.0) continue;
                                   for (std::size_t j = 0; j < n; ++j)
                                     pg.at(l, j) += aval * g.at(i, j);
                                 }
                             }});
  }
  return node;
}

Node* Tape::tanh(Node* a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  Node* n = emplace(std::move(out), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [n](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i) {
                              const double y = n->value[i];
                              pg[i] += g[i] * (1.0 - y * y);
                            }
                          }});
  }
  return n;
}

Node* Tape::sigmoid(Node* a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double x = out[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  Node* n = emplace(std::move(out), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [n](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i) {
                              const double y = n->value[i];
                              pg[i] += g[i] * y * (1.0 - y);
                            }
                          }});
  }
  return n;
}

Node* Tape::log(Node* a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (out[i] <= 0.0) throw DomainError("log: non-positive operand");
    out[i] = std::log(out[i]);
  }
  Node* n = emplace(std::move(out), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [a](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i)
                              pg[i] += g[i] / a->value[i];
                          }});
  }
  return n;
}

Node* Tape::exp(Node* a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = checked(std::exp(out[i]), "exp");
  Node* n = emplace(std::move(out), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [n](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i)
                              pg[i] += g[i] * n->value[i];
                          }});
  }
  return n;
}

Node* Tape::relu(Node* a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], 0.0);
  Node* n = emplace(std::move(out), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [a](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i)
                              pg[i] += a->value[i] > 0.0 ? g[i] : 0.0;
                          }});
  }
  return n;
}

Node* Tape::softmax(Node* a, int axis) {
  const Tensor& v = a->value;
  std::size_t groups, width, gstride, estride;
  if (v.rank() == 1) {
    if (axis != 0) throw ShapeError("softmax: axis out of range for rank 1");
    groups = 1, width = v.numel(), gstride = 0, estride = 1;
  } else if (v.rank() == 2) {
    if (axis == 1) {
      groups = v.rows(), width = v.cols(), gstride = v.cols(), estride = 1;
    } else if (axis == 0) {
      groups = v.cols(), width = v.rows(), gstride = 1, estride = v.cols();
    } else {
      throw ShapeError("softmax: axis out of range for rank 2");
    }
  } else {
    throw ShapeError("softmax: rank > 2 unsupported");
  }

  Tensor out(v.shape());
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * gstride;
    double mx = v[base];
    for (std::size_t i = 1; i < width; ++i)
      mx = std::max(mx, v[base + i * estride]);
    double z = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      const double e = std::exp(v[base + i * estride] - mx);
      out[base + i * estride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < width; ++i) out[base + i * estride] /= z;
  }

  Node* n = emplace(std::move(out), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back(
        {a, [n, groups, width, gstride, estride](const Tensor& g,
                                                 Tensor& pg) {
           for (std::size_t grp = 0; grp < groups; ++grp) {
             const std::size_t base = grp * gstride;
             double dot = 0.0;
             for (std::size_t i = 0; i < width; ++i) {
               const std::size_t at = base + i * estride;
               dot += g[at] * n->value[at];
             }
             for (std::size_t i = 0; i < width; ++i) {
               const std::size_t at = base + i * estride;
               pg[at] += n->value[at] * (g[at] - dot);
             }
           }
         }});
  }
  return n;
}

Node* Tape::gather(Node* a, std::vector<std::size_t> indices) {
  if (indices.empty()) throw ContractError("gather: empty index list");
  Tensor out({indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a->value.numel()) {
      throw ShapeError("gather: index out of range");
    }
    out[i] = a->value[indices[i]];
  }
  Node* n = emplace(std::move(out), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back(
        {a, [idx = std::move(indices)](const Tensor& g, Tensor& pg) {
           for (std::size_t i = 0; i < idx.size(); ++i) pg[idx[i]] += g[i];
         }});
  }
  return n;
}

Node* Tape::row(Node* a, std::size_t r) {
  const Tensor& v = a->value;
  if (v.rank() != 2) throw ShapeError("row: tensor is not rank 2");
  if (r >= v.rows()) throw ShapeError("row: index out of range");
  const std::size_t c = v.cols();
  Tensor out({1, c});
  for (std::size_t j = 0; j < c; ++j) out[j] = v.at(r, j);
  Node* n = emplace(std::move(out), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [r, c](const Tensor& g, Tensor& pg) {
                            for (std::size_t j = 0; j < c; ++j)
                              pg[r * c + j] += g[j];
                          }});
  }
  return n;
}

Node* Tape::sum(Node* a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) acc += a->value[i];
  Node* n = emplace(Tensor::scalar(checked(acc, "sum")), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < pg.numel(); ++i)
                              pg[i] += g[0];
                          }});
  }
  return n;
}

Node* Tape::mean(Node* a) {
  const double inv = 1.0 / static_cast<double>(a->value.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) acc += a->value[i];
  Node* n = emplace(Tensor::scalar(acc * inv), a->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [inv](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < pg.numel(); ++i)
                              pg[i] += g[0] * inv;
                          }});
  }
  return n;
}

Node* Tape::cosine(Node* a, Node* b) {
  check_same_shape(a, b, "cosine");
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) {
    dot += a->value[i] * b->value[i];
    na2 += a->value[i] * a->value[i];
    nb2 += b->value[i] * b->value[i];
  }
  if (na2 == 0.0 || nb2 == 0.0) {
    throw DegenerateInputError("cosine: zero vector");
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double c = dot / (na * nb);
  Node* n = emplace(Tensor::scalar(c), a->requires_grad || b->requires_grad);
  if (a->requires_grad) {
    n->parents.push_back({a, [a, b, c, na, nb](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < pg.numel(); ++i) {
                              pg[i] += g[0] * (b->value[i] / (na * nb) -
                                               c * a->value[i] / (na * na));
                            }
                          }});
  }
  if (b->requires_grad) {
    n->parents.push_back({b, [a, b, c, na, nb](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < pg.numel(); ++i) {
                              pg[i] += g[0] * (a->value[i] / (na * nb) -
                                               c * b->value[i] / (nb * nb));
                            }
                          }});
  }
  return n;
}

Node* Tape::straight_through(Node* bound, Tensor forward_value) {
  if (!bound->value.same_shape(forward_value)) {
    throw ShapeError("straight_through: value shape differs from bound node");
  }
  Node* n = emplace(std::move(forward_value), bound->requires_grad);
  if (bound->requires_grad) {
    n->parents.push_back({bound, [](const Tensor& g, Tensor& pg) {
                            for (std::size_t i = 0; i < g.numel(); ++i)
                              pg[i] += g[i];
                          }});
  }
  return n;
}

void Tape::backward(Node* root) {
  if (root->value.numel() != 1) {
    throw ContractError("backward: root is not scalar");
  }
  for (Node& n : nodes_) n.grad.fill(0.0);
  root->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (!n.requires_grad) continue;
    for (Node::Edge& e : n.parents) e.pull(n.grad, e.parent->grad);
  }
}

}  // namespace psst::ad
