#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recall/errors.hpp"
#include "recall/io/binary.hpp"
#include "recall/numkit/adam.hpp"
#include "recall/numkit/mlp.hpp"

namespace recall::sac {

using numkit::Activation;
using numkit::Matrix;
using numkit::Mlp;
using numkit::MlpCache;
using numkit::Vector;

struct NetShape {
  int input_dim = 4;
  std::vector<int> trunk_hidden{64, 64};
  std::vector<int> head_hidden{};
  int output_dim = 1;
  Activation hidden = Activation::relu;
};

/// Column indices of a batch grouped by the head that owns each sample.
struct Routing {
  std::vector<std::vector<Eigen::Index>> columns;
  Eigen::Index batch = 0;

  static Routing build(std::span<const int> heads, std::size_t n_heads) {
    Routing r;
    r.columns.resize(n_heads);
    r.batch = static_cast<Eigen::Index>(heads.size());
    for (std::size_t j = 0; j < heads.size(); ++j) {
      const int h = heads[j];
      if (h < 0 || static_cast<std::size_t>(h) >= n_heads)
        throw ContractError("routing: sample " + std::to_string(j) + " refers to missing head " + std::to_string(h));
      r.columns[static_cast<std::size_t>(h)].push_back(static_cast<Eigen::Index>(j));
    }
    return r;
  }
};

template <typename T>
struct NetCache {
  Routing routing;
  std::vector<std::optional<MlpCache<T>>> trunk;
  std::vector<std::optional<MlpCache<T>>> head;
};

/// Gradient of a MultiHeadNet; blocks that received no samples are empty.
template <typename T>
struct NetGrad {
  std::vector<std::optional<Mlp<T>>> trunks;
  std::vector<std::optional<Mlp<T>>> heads;

  NetGrad& operator+=(const NetGrad& other) {
    auto merge = [](auto& into, const auto& from) {
      if (into.size() < from.size()) into.resize(from.size());
      for (std::size_t k = 0; k < from.size(); ++k) {
        if (!from[k]) continue;
        if (into[k])
          *into[k] += *from[k];
        else
          into[k] = from[k];
      }
    };
    merge(trunks, other.trunks);
    merge(heads, other.heads);
    return *this;
  }

  NetGrad& operator*=(T s) {
    for (auto& g : trunks)
      if (g) *g *= s;
    for (auto& g : heads)
      if (g) *g *= s;
    return *this;
  }

  bool all_finite() const {
    for (const auto& g : trunks)
      if (g && !g->all_finite()) return false;
    for (const auto& g : heads)
      if (g && !g->all_finite()) return false;
    return true;
  }
};

/// MLP trunk with one output head per task. With `shared_trunk == false`
/// every head owns a private trunk, i.e. fully separate per-task networks.
template <typename T>
class MultiHeadNet {
 public:
  MultiHeadNet() = default;
  MultiHeadNet(NetShape shape, bool shared_trunk) : shape_(std::move(shape)), shared_(shared_trunk) {
    if (shape_.input_dim <= 0 || shape_.output_dim <= 0) throw StructuralError("multi-head net: bad dimensions");
    if (shape_.trunk_hidden.empty()) throw StructuralError("multi-head net: trunk needs at least one hidden layer");
  }

  const NetShape& shape() const { return shape_; }
  bool shared_trunk() const { return shared_; }
  std::size_t heads() const { return heads_.size(); }
  std::size_t trunk_count() const { return trunks_.size(); }

  template <typename Rng>
  std::size_t add_head(Rng& rng) {
    if (trunks_.empty() || !shared_) trunks_.push_back(make_trunk(rng));
    std::vector<int> sizes{trunk_width()};
    sizes.insert(sizes.end(), shape_.head_hidden.begin(), shape_.head_hidden.end());
    sizes.push_back(shape_.output_dim);
    heads_.push_back(numkit::make_mlp<T>(sizes, shape_.hidden, Activation::identity, rng));
    return heads_.size() - 1;
  }

  std::size_t trunk_index(std::size_t h) const { return shared_ ? 0 : h; }

  Mlp<T>& head(std::size_t h) { return heads_.at(h); }
  const Mlp<T>& head(std::size_t h) const { return heads_.at(h); }
  Mlp<T>& trunk(std::size_t k) { return trunks_.at(k); }
  const Mlp<T>& trunk(std::size_t k) const { return trunks_.at(k); }
  Mlp<T>& trunk_for(std::size_t h) { return trunks_.at(trunk_index(h)); }
  const Mlp<T>& trunk_for(std::size_t h) const { return trunks_.at(trunk_index(h)); }

  void save(io::Writer& w) const {
    w.put_bool(shared_);
    w.put<std::uint64_t>(trunks_.size());
    w.put<std::uint64_t>(heads_.size());
    for (const auto& t : trunks_) w.put_mlp(t);
    for (const auto& h : heads_) w.put_mlp(h);
  }

  /// Loads parameters into a net built from the same shape.
  void load(io::Reader& r) {
    if (r.get_bool() != shared_ || r.get<std::uint64_t>() != trunks_.size() ||
        r.get<std::uint64_t>() != heads_.size())
      throw StructuralError("checkpoint: network layout differs from the configuration");
    for (auto& t : trunks_) r.get_mlp(t);
    for (auto& h : heads_) r.get_mlp(h);
  }

  /// Copies head `src` onto head `dst` (and its trunk when unshared).
  void copy_head(std::size_t src, std::size_t dst) {
    if (src >= heads_.size() || dst >= heads_.size()) throw ContractError("multi-head net: copy of unknown head");
    heads_[dst] = heads_[src];
    if (!shared_) trunks_[dst] = trunks_[src];
  }

  Matrix<T> forward(const Matrix<T>& input, const Routing& routing, NetCache<T>* cache = nullptr) const {
    if (input.rows() != shape_.input_dim)
      throw StructuralError("multi-head net: input has " + std::to_string(input.rows()) + " rows, expected " +
                            std::to_string(shape_.input_dim));
    if (routing.batch != input.cols()) throw StructuralError("multi-head net: routing does not match batch");
    if (routing.columns.size() > heads_.size()) throw ContractError("multi-head net: routing refers to missing heads");
    Matrix<T> out(shape_.output_dim, input.cols());
    if (cache) {
      cache->routing = routing;
      cache->trunk.assign(trunks_.size(), std::nullopt);
      cache->head.assign(heads_.size(), std::nullopt);
    }
    std::optional<MlpCache<T>> shared_features;
    if (shared_) {
      if (trunks_.empty()) throw ContractError("multi-head net: no heads");
      shared_features = numkit::mlp_forward(trunks_[0], input);
    }
    const bool single = single_head(routing);
    for (std::size_t h = 0; h < routing.columns.size(); ++h) {
      const auto& cols = routing.columns[h];
      if (cols.empty()) continue;
      MlpCache<T> head_cache;
      if (shared_) {
        head_cache = single ? numkit::mlp_forward(heads_[h], shared_features->output())
                            : numkit::mlp_forward(heads_[h], Matrix<T>(shared_features->output()(Eigen::all, cols)));
      } else {
        MlpCache<T> tc = single ? numkit::mlp_forward(trunks_[h], input)
                                : numkit::mlp_forward(trunks_[h], Matrix<T>(input(Eigen::all, cols)));
        head_cache = numkit::mlp_forward(heads_[h], tc.output());
        if (cache) cache->trunk[h] = std::move(tc);
      }
      if (single)
        out = head_cache.output();
      else
        out(Eigen::all, cols) = head_cache.output();
      if (cache) cache->head[h] = std::move(head_cache);
    }
    if (cache && shared_) cache->trunk[0] = std::move(shared_features);
    return out;
  }

  Matrix<T> forward(const Matrix<T>& input, std::span<const int> head_ids) const {
    return forward(input, Routing::build(head_ids, heads_.size()));
  }

  /// Parameter and input gradients of sum <output, output_grad>.
  std::pair<NetGrad<T>, Matrix<T>> backward(const NetCache<T>& cache, const Matrix<T>& output_grad,
                                            bool want_params = true) const {
    const Routing& routing = cache.routing;
    if (output_grad.rows() != shape_.output_dim || output_grad.cols() != routing.batch)
      throw StructuralError("multi-head net: output gradient shape mismatch");
    NetGrad<T> grad;
    grad.trunks.resize(trunks_.size());
    grad.heads.resize(heads_.size());
    Matrix<T> input_grad = Matrix<T>::Zero(shape_.input_dim, routing.batch);
    const bool single = single_head(routing);
    Matrix<T> feature_grad;
    if (shared_) feature_grad = Matrix<T>::Zero(trunk_width(), routing.batch);
    for (std::size_t h = 0; h < routing.columns.size(); ++h) {
      const auto& cols = routing.columns[h];
      if (cols.empty()) continue;
      const Matrix<T> dy = single ? output_grad : Matrix<T>(output_grad(Eigen::all, cols));
      Matrix<T> d_features;
      if (want_params) {
        auto g = numkit::mlp_backward(heads_[h], *cache.head[h], dy);
        grad.heads[h] = std::move(g.params);
        d_features = std::move(g.input);
      } else {
        d_features = numkit::mlp_input_grad(heads_[h], *cache.head[h], dy);
      }
      if (shared_) {
        if (single)
          feature_grad = std::move(d_features);
        else
          feature_grad(Eigen::all, cols) = d_features;
      } else {
        Matrix<T> dx;
        if (want_params) {
          auto g = numkit::mlp_backward(trunks_[h], *cache.trunk[h], d_features);
          grad.trunks[h] = std::move(g.params);
          dx = std::move(g.input);
        } else {
          dx = numkit::mlp_input_grad(trunks_[h], *cache.trunk[h], d_features);
        }
        if (single)
          input_grad = std::move(dx);
        else
          input_grad(Eigen::all, cols) = dx;
      }
    }
    if (shared_) {
      if (want_params) {
        auto g = numkit::mlp_backward(trunks_[0], *cache.trunk[0], feature_grad);
        grad.trunks[0] = std::move(g.params);
        input_grad = std::move(g.input);
      } else {
        input_grad = numkit::mlp_input_grad(trunks_[0], *cache.trunk[0], feature_grad);
      }
    }
    return {std::move(grad), std::move(input_grad)};
  }

  /// Applies `f(target_block, source_block)` over every trunk and head.
  template <typename F>
  void zip_blocks(const MultiHeadNet& other, F&& f) {
    if (other.trunks_.size() != trunks_.size() || other.heads_.size() != heads_.size())
      throw StructuralError("multi-head net: block count mismatch");
    for (std::size_t k = 0; k < trunks_.size(); ++k) f(trunks_[k], other.trunks_[k]);
    for (std::size_t k = 0; k < heads_.size(); ++k) f(heads_[k], other.heads_[k]);
  }

  template <typename U>
  MultiHeadNet<U> cast() const {
    MultiHeadNet<U> out(shape_, shared_);
    for (const auto& t : trunks_) out.trunks_.push_back(t.template cast<U>());
    for (const auto& h : heads_) out.heads_.push_back(h.template cast<U>());
    return out;
  }

  std::vector<Mlp<T>>& trunks() { return trunks_; }
  const std::vector<Mlp<T>>& trunks() const { return trunks_; }
  std::vector<Mlp<T>>& head_list() { return heads_; }
  const std::vector<Mlp<T>>& head_list() const { return heads_; }

 private:
  template <typename U>
  friend class MultiHeadNet;

  int trunk_width() const { return shape_.trunk_hidden.back(); }

  template <typename Rng>
  Mlp<T> make_trunk(Rng& rng) {
    std::vector<int> sizes{shape_.input_dim};
    sizes.insert(sizes.end(), shape_.trunk_hidden.begin(), shape_.trunk_hidden.end());
    return numkit::make_mlp<T>(sizes, shape_.hidden, shape_.hidden, rng);
  }

  static bool single_head(const Routing& r) {
    int used = 0;
    for (const auto& c : r.columns)
      if (!c.empty()) ++used;
    return used == 1;
  }

  NetShape shape_;
  bool shared_ = true;
  std::vector<Mlp<T>> trunks_;
  std::vector<Mlp<T>> heads_;
};

/// Adam over the blocks of a MultiHeadNet. Each block keeps its own step
/// count and is only touched when it received a gradient.
template <typename T>
class NetOptimizer {
 public:
  explicit NetOptimizer(numkit::AdamHyper hyper = {}) : hyper_(hyper) {}

  void sync(const MultiHeadNet<T>& net) {
    while (trunks_.size() < net.trunk_count())
      trunks_.push_back(numkit::AdamState<T>::for_params(net.trunk(trunks_.size()), hyper_));
    while (heads_.size() < net.heads())
      heads_.push_back(numkit::AdamState<T>::for_params(net.head(heads_.size()), hyper_));
  }

  /// Resets the moments of head `h` (used after its weights are copied).
  void reset_head(const MultiHeadNet<T>& net, std::size_t h) {
    sync(net);
    heads_.at(h) = numkit::AdamState<T>::for_params(net.head(h), hyper_);
    if (!net.shared_trunk()) trunks_.at(h) = numkit::AdamState<T>::for_params(net.trunk(h), hyper_);
  }

  /// Applies the step atomically: a non-finite block rejects all blocks.
  void apply(MultiHeadNet<T>& net, const NetGrad<T>& grad) {
    sync(net);
    if (!grad.all_finite()) throw NumericError("optimizer: non-finite gradient, update rejected");
    for (std::size_t k = 0; k < grad.trunks.size(); ++k)
      if (grad.trunks[k]) numkit::adam_update(net.trunk(k), *grad.trunks[k], trunks_[k]);
    for (std::size_t k = 0; k < grad.heads.size(); ++k)
      if (grad.heads[k]) numkit::adam_update(net.head(k), *grad.heads[k], heads_[k]);
  }

  void save(io::Writer& w) const {
    w.put<std::uint64_t>(trunks_.size());
    w.put<std::uint64_t>(heads_.size());
    for (const auto& t : trunks_) w.put_adam(t);
    for (const auto& h : heads_) w.put_adam(h);
  }

  void load(const MultiHeadNet<T>& net, io::Reader& r) {
    sync(net);
    if (r.get<std::uint64_t>() != trunks_.size() || r.get<std::uint64_t>() != heads_.size())
      throw StructuralError("checkpoint: optimizer layout differs from the configuration");
    for (auto& t : trunks_) r.get_adam(t);
    for (auto& h : heads_) r.get_adam(h);
  }

  const numkit::AdamState<T>& head_state(std::size_t h) const { return heads_.at(h); }
  const numkit::AdamState<T>& trunk_state(std::size_t k) const { return trunks_.at(k); }

 private:
  numkit::AdamHyper hyper_;
  std::vector<numkit::AdamState<T>> trunks_;
  std::vector<numkit::AdamState<T>> heads_;
};

}  // namespace recall::sac
