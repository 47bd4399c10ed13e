#include "docmt/model.hpp"

#include <algorithm>
#include <cmath>
#include <string_view>

#include "docmt/bpe.hpp"

namespace docmt {

namespace {

constexpr Real kMaskValue = Real(-1e9);

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

enum class InitKind { kMatrix, kEmbedding, kOnes, kZeros };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind kind;
};

void add_norm(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t d) {
  specs.push_back({prefix + ".gain", {d}, InitKind::kOnes});
  specs.push_back({prefix + ".bias", {d}, InitKind::kZeros});
}

void add_attention(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t d) {
  for (const char* p : {"q", "k", "v", "o"}) specs.push_back({prefix + "." + p, {d, d}, InitKind::kMatrix});
}

void add_ffn(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t d, std::size_t f) {
  specs.push_back({prefix + ".w1", {d, f}, InitKind::kMatrix});
  specs.push_back({prefix + ".b1", {f}, InitKind::kZeros});
  specs.push_back({prefix + ".w2", {f, d}, InitKind::kMatrix});
  specs.push_back({prefix + ".b2", {d}, InitKind::kZeros});
}

std::string layer_name(const char* stack, int layer) { return std::string(stack) + "." + std::to_string(layer); }

std::vector<ParamSpec> parameter_specs(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.model_width);
  const auto f = static_cast<std::size_t>(c.ffn_width);
  std::vector<ParamSpec> specs;
  specs.push_back({"src_embed", {static_cast<std::size_t>(c.src_vocab), d}, InitKind::kEmbedding});
  specs.push_back({"tgt_embed", {static_cast<std::size_t>(c.tgt_vocab), d}, InitKind::kEmbedding});
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = layer_name("enc", l);
    add_norm(specs, p + ".self_norm", d);
    add_attention(specs, p + ".self_attn", d);
    add_norm(specs, p + ".ffn_norm", d);
    add_ffn(specs, p + ".ffn", d, f);
  }
  add_norm(specs, "enc.final_norm", d);
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = layer_name("dec", l);
    add_norm(specs, p + ".self_norm", d);
    add_attention(specs, p + ".self_attn", d);
    add_norm(specs, p + ".cross_norm", d);
    add_attention(specs, p + ".cross_attn", d);
    add_norm(specs, p + ".ffn_norm", d);
    add_ffn(specs, p + ".ffn", d, f);
  }
  add_norm(specs, "dec.final_norm", d);
  if (!c.tie_output) specs.push_back({"out.weight", {d, static_cast<std::size_t>(c.tgt_vocab)}, InitKind::kMatrix});
  specs.push_back({"out.bias", {static_cast<std::size_t>(c.tgt_vocab)}, InitKind::kZeros});
  return specs;
}

struct Dims {
  std::size_t d, heads, head_dim;
};

Dims dims_of(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.model_width);
  const auto h = static_cast<std::size_t>(c.num_heads);
  return {d, h, d / h};
}

// Shared state for one forward pass.
struct Pass {
  const ModelParams& p;
  Dims dims;
  bool train;
  Rng* rng;
  Real rate;

  const Tensor& w(const std::string& name) const { return p.at(name); }

  Tensor drop(const Tensor& x) const { return train && rate > 0 ? dropout(x, rate, *rng, true) : x; }

  Tensor norm(const Tensor& x, const std::string& prefix) const {
    return layer_norm(x, w(prefix + ".gain"), w(prefix + ".bias"));
  }

  Tensor heads(const Tensor& x, std::size_t batch, std::size_t len) const {
    return transpose(reshape(x, {batch, len, dims.heads, dims.head_dim}), 1, 2);
  }

  Tensor unheads(const Tensor& x, std::size_t batch, std::size_t len) const {
    return reshape(transpose(x, 1, 2), {batch, len, dims.d});
  }

  // q: [B, H, T, dh]; keys_t: [B', H, dh, S]; values: [B', H, S, dh].
  Tensor attend(const Tensor& q, const Tensor& keys_t, const Tensor& values, const Tensor& mask) const {
    Tensor scores = scale(matmul(q, keys_t), Real(1) / std::sqrt(static_cast<Real>(dims.head_dim)));
    if (mask.defined()) scores = add(scores, mask);
    return matmul(softmax(scores, -1), values);
  }

  Tensor self_attention(const Tensor& h, const std::string& prefix, std::size_t batch, std::size_t len,
                        const Tensor& mask) const {
    Tensor q = heads(matmul(h, w(prefix + ".q")), batch, len);
    Tensor kt = transpose(heads(matmul(h, w(prefix + ".k")), batch, len), 2, 3);
    Tensor v = heads(matmul(h, w(prefix + ".v")), batch, len);
    return matmul(unheads(attend(q, kt, v, mask), batch, len), w(prefix + ".o"));
  }

  std::pair<Tensor, Tensor> cross_kv(const Tensor& memory, const std::string& prefix, std::size_t batch,
                                     std::size_t src_len) const {
    Tensor kt = transpose(heads(matmul(memory, w(prefix + ".k")), batch, src_len), 2, 3);
    Tensor v = heads(matmul(memory, w(prefix + ".v")), batch, src_len);
    return {kt, v};
  }

  Tensor cross_attention(const Tensor& h, const std::string& prefix, std::size_t batch, std::size_t len,
                         const Tensor& keys_t, const Tensor& values, const Tensor& mask) const {
    Tensor q = heads(matmul(h, w(prefix + ".q")), batch, len);
    return matmul(unheads(attend(q, keys_t, values, mask), batch, len), w(prefix + ".o"));
  }

  Tensor ffn(const Tensor& h, const std::string& prefix) const {
    Tensor hidden = relu(add(matmul(h, w(prefix + ".w1")), w(prefix + ".b1")));
    return add(matmul(hidden, w(prefix + ".w2")), w(prefix + ".b2"));
  }

  Tensor embed(const std::string& table, std::span<const int> ids, std::size_t batch, std::size_t len) const {
    if (len > static_cast<std::size_t>(p.config.max_positions)) {
      throw SequenceTooLong("sequence of length " + std::to_string(len) + " exceeds max_positions " +
                            std::to_string(p.config.max_positions));
    }
    Tensor x = scale(embedding(w(table), ids, {batch, len}), std::sqrt(static_cast<Real>(dims.d)));
    Tensor pe = Tensor::from({len, dims.d}, sinusoid_positions(len, dims.d));
    return drop(add(x, pe));
  }

  Tensor encoder(std::span<const int> src, std::size_t batch, std::size_t len, const Tensor& pad_mask) const {
    Tensor x = embed("src_embed", src, batch, len);
    for (int l = 0; l < p.config.num_layers; ++l) {
      const std::string name = layer_name("enc", l);
      x = add(x, drop(self_attention(norm(x, name + ".self_norm"), name + ".self_attn", batch, len, pad_mask)));
      x = add(x, drop(ffn(norm(x, name + ".ffn_norm"), name + ".ffn")));
    }
    return norm(x, "enc.final_norm");
  }

  // cross[l] = (keys_t, values) for decoder layer l.
  Tensor decoder(std::span<const int> tgt, std::size_t batch, std::size_t len,
                 const std::vector<std::pair<Tensor, Tensor>>& cross, const Tensor& src_mask) const {
    Tensor x = embed("tgt_embed", tgt, batch, len);
    std::vector<Real> causal(len * len, Real(0));
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = i + 1; j < len; ++j) causal[i * len + j] = kMaskValue;
    }
    const Tensor causal_mask = Tensor::from({len, len}, std::move(causal));
    for (int l = 0; l < p.config.num_layers; ++l) {
      const std::string name = layer_name("dec", l);
      x = add(x, drop(self_attention(norm(x, name + ".self_norm"), name + ".self_attn", batch, len, causal_mask)));
      x = add(x, drop(cross_attention(norm(x, name + ".cross_norm"), name + ".cross_attn", batch, len,
                                      cross[static_cast<std::size_t>(l)].first,
                                      cross[static_cast<std::size_t>(l)].second, src_mask)));
      x = add(x, drop(ffn(norm(x, name + ".ffn_norm"), name + ".ffn")));
    }
    return norm(x, "dec.final_norm");
  }

  Tensor project(const Tensor& h) const {
    const Tensor weight = p.config.tie_output ? transpose(w("tgt_embed"), 0, 1) : w("out.weight");
    return add(matmul(h, weight), w("out.bias"));
  }
};

// [B, 1, 1, S] additive mask for PAD source positions; undefined when the
// batch has no padding.
Tensor source_pad_mask(const Batch& b) {
  bool any = false;
  std::vector<Real> m(b.size * b.src_len, Real(0));
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (b.src[i] == kPadId) {
      m[i] = kMaskValue;
      any = true;
    }
  }
  if (!any) return {};
  return Tensor::from({b.size, 1, 1, b.src_len}, std::move(m));
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers <= 0 || model_width <= 0 || num_heads <= 0 || ffn_width <= 0 || src_vocab <= 0 || tgt_vocab <= 0 ||
      max_positions <= 0) {
    throw std::invalid_argument("model config: all sizes must be positive");
  }
  if (model_width % num_heads != 0) throw std::invalid_argument("model config: model_width must be divisible by num_heads");
  if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("model config: dropout must be in [0, 1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers}, {"model_width", c.model_width}, {"num_heads", c.num_heads},
                     {"ffn_width", c.ffn_width},   {"src_vocab", c.src_vocab},     {"tgt_vocab", c.tgt_vocab},
                     {"max_positions", c.max_positions}, {"dropout", c.dropout}, {"tie_output", c.tie_output}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.num_layers = j.value("num_layers", c.num_layers);
  c.model_width = j.value("model_width", c.model_width);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.ffn_width = j.value("ffn_width", c.ffn_width);
  c.src_vocab = j.value("src_vocab", c.src_vocab);
  c.tgt_vocab = j.value("tgt_vocab", c.tgt_vocab);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.dropout = j.value("dropout", c.dropout);
  c.tie_output = j.value("tie_output", c.tie_output);
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : tensors) t.zero_grad();
}

ModelParams ModelParams::deep_copy() const {
  ModelParams out;
  out.config = config;
  for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.clone());
  out.backup_ = backup_;
  return out;
}

void ModelParams::backup() {
  backup_.clear();
  for (const auto& [name, t] : tensors) backup_.emplace(name, std::vector<Real>(t.data().begin(), t.data().end()));
}

void ModelParams::restore() {
  if (backup_.empty()) throw std::logic_error("restore_params: no backup has been taken");
  for (auto& [name, t] : tensors) {
    const auto& saved = backup_.at(name);
    std::copy(saved.begin(), saved.end(), t.data().begin());
  }
}

const std::vector<Real>& ModelParams::backup_of(const std::string& name) const {
  auto it = backup_.find(name);
  if (it == backup_.end()) throw std::logic_error("no backup for parameter " + name);
  return it->second;
}

bool ModelParams::values_equal(const ModelParams& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (const auto& [name, t] : tensors) {
    auto it = other.tensors.find(name);
    if (it == other.tensors.end() || it->second.shape() != t.shape()) return false;
    if (!std::equal(t.data().begin(), t.data().end(), it->second.data().begin())) return false;
  }
  return true;
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams params;
  params.config = config;
  const Real emb_std = Real(1) / std::sqrt(static_cast<Real>(config.model_width));
  for (const auto& spec : parameter_specs(config)) {
    Tensor t = Tensor::zeros(spec.shape, true);
    Rng rng = Rng::derive(seed, fnv1a(spec.name));
    auto data = t.data();
    switch (spec.kind) {
      case InitKind::kMatrix: {
        const double limit = std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1]));
        for (Real& v : data) v = static_cast<Real>(rng.uniform(-limit, limit));
        break;
      }
      case InitKind::kEmbedding:
        for (Real& v : data) v = static_cast<Real>(rng.normal()) * emb_std;
        break;
      case InitKind::kOnes:
        std::fill(data.begin(), data.end(), Real(1));
        break;
      case InitKind::kZeros:
        break;
    }
    params.tensors.emplace(spec.name, std::move(t));
  }
  return params;
}

std::vector<Real> sinusoid_positions(std::size_t positions, std::size_t width) {
  std::vector<Real> pe(positions * width);
  for (std::size_t pos = 0; pos < positions; ++pos) {
    for (std::size_t i = 0; i < width; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(width));
      pe[pos * width + i] = static_cast<Real>(std::sin(static_cast<double>(pos) * freq));
      if (i + 1 < width) pe[pos * width + i + 1] = static_cast<Real>(std::cos(static_cast<double>(pos) * freq));
    }
  }
  return pe;
}

Batch make_batch(std::span<const SentencePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("make_batch: empty batch");
  Batch b;
  b.size = pairs.size();
  for (const auto& [src, tgt] : pairs) {
    b.src_len = std::max(b.src_len, src.size() + 1);
    b.tgt_len = std::max(b.tgt_len, tgt.size() + 1);
  }
  b.src.assign(b.size * b.src_len, kPadId);
  b.tgt_in.assign(b.size * b.tgt_len, kPadId);
  b.tgt_out.assign(b.size * b.tgt_len, kPadId);
  for (std::size_t i = 0; i < b.size; ++i) {
    const auto& [src, tgt] = pairs[i];
    std::copy(src.begin(), src.end(), b.src.begin() + static_cast<std::ptrdiff_t>(i * b.src_len));
    b.src[i * b.src_len + src.size()] = kEosId;
    b.tgt_in[i * b.tgt_len] = kBosId;
    std::copy(tgt.begin(), tgt.end(), b.tgt_in.begin() + static_cast<std::ptrdiff_t>(i * b.tgt_len + 1));
    std::copy(tgt.begin(), tgt.end(), b.tgt_out.begin() + static_cast<std::ptrdiff_t>(i * b.tgt_len));
    b.tgt_out[i * b.tgt_len + tgt.size()] = kEosId;
  }
  return b;
}

Batch make_batch(std::span<const int> src, std::span<const int> tgt) {
  const SentencePair pair{{src.begin(), src.end()}, {tgt.begin(), tgt.end()}};
  return make_batch(std::span<const SentencePair>(&pair, 1));
}

Tensor forward_logits(const ModelParams& params, const Batch& batch, bool train_mode, Rng* rng) {
  const Real rate = static_cast<Real>(params.config.dropout);
  if (train_mode && rate > 0 && rng == nullptr) throw std::invalid_argument("forward: dropout in train mode needs an rng");
  const Pass pass{params, dims_of(params.config), train_mode, rng, rate};
  const Tensor mask = source_pad_mask(batch);
  const Tensor memory = pass.encoder(batch.src, batch.size, batch.src_len, mask);
  std::vector<std::pair<Tensor, Tensor>> cross;
  for (int l = 0; l < params.config.num_layers; ++l) {
    cross.push_back(pass.cross_kv(memory, layer_name("dec", l) + ".cross_attn", batch.size, batch.src_len));
  }
  const Tensor h = pass.decoder(batch.tgt_in, batch.size, batch.tgt_len, cross, mask);
  return pass.project(h);
}

Tensor forward_loss(const ModelParams& params, const Batch& batch, Real smoothing, bool train_mode, Rng* rng) {
  const Tensor logits = forward_logits(params, batch, train_mode, rng);
  const std::size_t V = logits.shape().back();
  return cross_entropy_ls(reshape(logits, {batch.size * batch.tgt_len, V}), batch.tgt_out, smoothing, kPadId);
}

Tensor forward_loss(const ModelParams& params, std::span<const int> src, std::span<const int> tgt, Real smoothing,
                    bool train_mode, Rng* rng) {
  return forward_loss(params, make_batch(src, tgt), smoothing, train_mode, rng);
}

SourceEncoding encode_source(const ModelParams& params, std::span<const int> src) {
  NoGradGuard no_grad;
  const Pass pass{params, dims_of(params.config), false, nullptr, Real(0)};
  std::vector<int> ids(src.begin(), src.end());
  ids.push_back(kEosId);
  SourceEncoding enc;
  enc.src_len = ids.size();
  enc.memory = pass.encoder(ids, 1, ids.size(), Tensor());
  for (int l = 0; l < params.config.num_layers; ++l) {
    auto [kt, v] = pass.cross_kv(enc.memory, layer_name("dec", l) + ".cross_attn", 1, ids.size());
    enc.cross_keys_t.push_back(std::move(kt));
    enc.cross_values.push_back(std::move(v));
  }
  return enc;
}

std::vector<std::vector<Real>> decode_step(const ModelParams& params, const SourceEncoding& enc,
                                           const std::vector<std::vector<int>>& prefixes) {
  if (prefixes.empty()) return {};
  const std::size_t n = prefixes.size();
  const std::size_t len = prefixes.front().size();
  std::vector<int> ids;
  ids.reserve(n * len);
  for (const auto& p : prefixes) {
    if (p.size() != len || p.empty() || p.front() != kBosId) {
      throw std::invalid_argument("decode_step: prefixes must share a length and start with BOS");
    }
    ids.insert(ids.end(), p.begin(), p.end());
  }
  NoGradGuard no_grad;
  const Pass pass{params, dims_of(params.config), false, nullptr, Real(0)};
  std::vector<std::pair<Tensor, Tensor>> cross;
  for (std::size_t l = 0; l < enc.cross_keys_t.size(); ++l) cross.emplace_back(enc.cross_keys_t[l], enc.cross_values[l]);
  const Tensor h = pass.decoder(ids, n, len, cross, Tensor());

  const std::size_t d = pass.dims.d;
  std::vector<Real> last(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(h.data().begin() + static_cast<std::ptrdiff_t>((i * len + len - 1) * d), d,
                last.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const Tensor logp = log_softmax(pass.project(Tensor::from({n, d}, std::move(last))), -1);
  const std::size_t V = logp.shape().back();
  std::vector<std::vector<Real>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].assign(logp.data().begin() + static_cast<std::ptrdiff_t>(i * V),
                  logp.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * V));
  }
  return out;
}

}  // namespace docmt
