// Copyright 2026 The slak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "slak/model.hpp"

#include <atomic>
#include <cmath>

#include "slak/gemm.hpp"
#include "slak/kernels.hpp"

namespace slak {

std::string DwVariant::str() const {
  switch (kind) {
    case Kind::kFull: return "full";
    case Kind::kDecomposedParallel: return "parallel";
    case Kind::kDecomposedSequential: return "sequential";
    case Kind::kDilated: return "dilated:" + std::to_string(rate);
    case Kind::kStackedSmall: return "stacked:" + std::to_string(count);
  }
  return "?";
}

DwVariant DwVariant::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  auto arg = [&](int fallback) {
    if (colon == std::string::npos) return fallback;
    try {
      std::size_t used = 0;
      const int v = std::stoi(text.substr(colon + 1), &used);
      if (used == text.size() - colon - 1) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::kInvalidConfig,
                "dw_variant: bad argument in '" + text + "'");
  };
  if (head == "full" && colon == std::string::npos) return full();
  if (head == "parallel" && colon == std::string::npos) return parallel();
  if (head == "sequential" && colon == std::string::npos) return sequential();
  if (head == "dilated") return dilated(arg(3));
  if (head == "stacked") return stacked(arg(10));
  throw Error(ErrorKind::kInvalidConfig, "dw_variant: unknown '" + text + "'");
}

int dilated_kernel_size(int m, int rate) {
  int k = (m - 1 + rate - 1) / rate + 1;
  if (k % 2 == 0) ++k;
  return k;
}

ModelConfig ModelConfig::slak_t() { return ModelConfig{}; }

ModelConfig ModelConfig::convnext_t() {
  ModelConfig c;
  c.stage_kernels = {7, 7, 7, 7};
  c.dw_variant = DwVariant::full();
  return c;
}

ModelConfig ModelConfig::slak_micro() {
  ModelConfig c;
  c.stage_blocks = {2, 2, 2};
  c.stage_dims = {32, 64, 128};
  c.stage_kernels = {31, 29, 13};
  c.num_classes = 2;
  c.input_size = 64;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorKind::kInvalidConfig, field + ": " + why);
  };
  if (stage_dims.empty()) fail("stage_dims", "at least one stage required");
  if (stage_blocks.size() != stage_dims.size()) {
    fail("stage_blocks", "length differs from stage_dims");
  }
  if (stage_kernels.size() != stage_dims.size()) {
    fail("stage_kernels", "length differs from stage_dims");
  }
  for (int b : stage_blocks) {
    if (b < 0) fail("stage_blocks", "negative block count");
  }
  for (int d : stage_dims) {
    if (d < 1) fail("stage_dims", "channels must be >= 1");
  }
  for (int k : stage_kernels) {
    if (k < 1) fail("stage_kernels", "kernel size must be >= 1");
    if (k < short_edge) fail("short_edge", "exceeds a stage kernel size");
  }
  if (short_edge < 1 || short_edge % 2 == 0) {
    fail("short_edge", "must be odd and >= 1");
  }
  if (dw_variant.kind == DwVariant::Kind::kDilated && dw_variant.rate < 1) {
    fail("dw_variant", "dilation rate must be >= 1");
  }
  if (dw_variant.kind == DwVariant::Kind::kStackedSmall && dw_variant.count < 1) {
    fail("dw_variant", "stack count must be >= 1");
  }
  if (!(layer_scale_init >= 0.0) || !std::isfinite(layer_scale_init)) {
    fail("layer_scale_init", "must be finite and >= 0");
  }
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) {
    fail("drop_path_rate", "must be in [0, 1)");
  }
  if (num_classes < 1) fail("num_classes", "must be >= 1");
  if (in_channels < 1) fail("in_channels", "must be >= 1");
  if (input_size < 4 || input_size % 4 != 0) {
    fail("input_size", "must be a positive multiple of 4");
  }
}

// ---------------------------------------------------------------------------
// Layout

struct LnRef {
  std::size_t gamma, beta;
};
struct BnRef {
  std::size_t gamma, beta, mean, var;
};
struct ConvRef {
  ConvSpec spec;
  std::size_t weight;
  std::optional<std::size_t> bias;
};
struct PathRef {
  std::vector<ConvRef> convs;
  std::optional<BnRef> bn;
};
struct BlockRef {
  std::vector<PathRef> paths;
  LnRef norm;
  ConvRef pw1, pw2;
  std::size_t gamma;
  double drop_rate;
};
struct StageRef {
  std::optional<LnRef> down_norm;
  std::optional<ConvRef> down;
  std::vector<BlockRef> blocks;
};

template <typename T>
struct Model<T>::Layout {
  ConvRef stem;
  LnRef stem_norm;
  std::vector<StageRef> stages;
  LnRef head_norm;
  std::size_t head_weight, head_bias;
};

namespace {

struct LayoutData {
  ConvRef stem;
  LnRef stem_norm;
  std::vector<StageRef> stages;
  LnRef head_norm;
  std::size_t head_weight = 0, head_bias = 0;
};

double numel_of(const Shape& s) {
  double n = 1;
  for (auto d : s) n *= double(d);
  return n;
}

class Builder {
 public:
  std::vector<TensorInfo> infos;
  bool in_block = false;

  std::size_t add(std::string id, ParamRole role, Shape shape, double macs = 0) {
    infos.push_back({std::move(id), role, std::move(shape), macs, in_block});
    return infos.size() - 1;
  }

  LnRef norm(const std::string& prefix, int c) {
    return {add(prefix + ".weight", ParamRole::kOther, {c}),
            add(prefix + ".bias", ParamRole::kOther, {c})};
  }

  BnRef batchnorm(const std::string& prefix, int c) {
    return {add(prefix + ".weight", ParamRole::kOther, {c}),
            add(prefix + ".bias", ParamRole::kOther, {c}),
            add(prefix + ".running_mean", ParamRole::kBuffer, {c}),
            add(prefix + ".running_var", ParamRole::kBuffer, {c})};
  }

  ConvRef conv(const std::string& prefix, const ConvSpec& spec, ParamRole role,
               bool bias, int out_h, int out_w) {
    spec.validate();
    const Shape ws = spec.weight_shape();
    ConvRef r{spec, add(prefix + ".weight", role, ws,
                        numel_of(ws) * double(out_h) * double(out_w)),
              std::nullopt};
    if (bias) r.bias = add(prefix + ".bias", ParamRole::kOther, {spec.out_channels});
    return r;
  }

  ConvRef dw(const std::string& prefix, int c, int kh, int kw, int h,
             bool bias = false, int dilation = 1) {
    return conv(prefix, ConvSpec::depthwise(c, kh, kw, dilation),
                ParamRole::kDwWeight, bias, h, h);
  }

  std::vector<PathRef> dw_unit(const std::string& p, int c, int m, int n,
                               const DwVariant& v, int h) {
    using K = DwVariant::Kind;
    std::vector<PathRef> paths;
    auto small = [&] {
      paths.push_back({{dw(p + ".small", c, kSmallKernel, kSmallKernel, h)},
                       batchnorm(p + ".small.bn", c)});
    };
    switch (v.kind) {
      case K::kFull:
        paths.push_back({{dw(p + ".conv", c, m, m, h, true)}, std::nullopt});
        break;
      case K::kDecomposedParallel:
        paths.push_back({{dw(p + ".long_h", c, m, n, h)},
                         batchnorm(p + ".long_h.bn", c)});
        paths.push_back({{dw(p + ".long_w", c, n, m, h)},
                         batchnorm(p + ".long_w.bn", c)});
        small();
        break;
      case K::kDecomposedSequential:
        paths.push_back({{dw(p + ".seq.0", c, m, n, h), dw(p + ".seq.1", c, n, m, h)},
                         batchnorm(p + ".seq.bn", c)});
        small();
        break;
      case K::kDilated: {
        const int k = dilated_kernel_size(m, v.rate);
        paths.push_back({{dw(p + ".dilated", c, k, k, h, false, v.rate)},
                         batchnorm(p + ".dilated.bn", c)});
        small();
        break;
      }
      case K::kStackedSmall: {
        PathRef path;
        for (int i = 0; i < v.count; ++i) {
          path.convs.push_back(dw(p + ".stack." + std::to_string(i), c, 3, 3, h));
        }
        path.bn = batchnorm(p + ".stack.bn", c);
        paths.push_back(std::move(path));
        small();
        break;
      }
    }
    return paths;
  }
};

LayoutData build_layout(const ModelConfig& cfg, Builder& b) {
  cfg.validate();
  LayoutData L;
  int h = cfg.input_size / 4;
  const int d0 = cfg.stage_dims[0];
  L.stem = b.conv("stem.conv", ConvSpec::full(cfg.in_channels, d0, 4, 4, 4),
                  ParamRole::kOther, true, h, h);
  L.stem_norm = b.norm("stem.norm", d0);
  int total_blocks = 0;
  for (int n : cfg.stage_blocks) total_blocks += n;
  int block_index = 0;
  for (std::size_t s = 0; s < cfg.stage_dims.size(); ++s) {
    const std::string sp = "stages." + std::to_string(s);
    const int c = cfg.stage_dims[s];
    StageRef stage;
    if (s > 0) {
      const int cin = cfg.stage_dims[s - 1];
      h = std::max(1, h / 2);
      stage.down_norm = b.norm(sp + ".down.norm", cin);
      stage.down = b.conv(sp + ".down.conv", ConvSpec::full(cin, c, 2, 2, 2),
                          ParamRole::kOther, true, h, h);
    }
    for (int j = 0; j < cfg.stage_blocks[s]; ++j, ++block_index) {
      const std::string bp = sp + ".blocks." + std::to_string(j);
      b.in_block = true;
      BlockRef blk;
      blk.paths = b.dw_unit(bp + ".dw", c, cfg.stage_kernels[s], cfg.short_edge,
                            cfg.dw_variant, h);
      blk.norm = b.norm(bp + ".norm", c);
      blk.pw1 = b.conv(bp + ".pw1", ConvSpec::full(c, 4 * c, 1, 1, 1),
                       ParamRole::kPwWeight, true, h, h);
      blk.pw2 = b.conv(bp + ".pw2", ConvSpec::full(4 * c, c, 1, 1, 1),
                       ParamRole::kPwWeight, true, h, h);
      blk.gamma = b.add(bp + ".gamma", ParamRole::kOther, {c});
      blk.drop_rate = total_blocks > 1 ? cfg.drop_path_rate * block_index /
                                             double(total_blocks - 1)
                                       : 0.0;
      b.in_block = false;
      stage.blocks.push_back(std::move(blk));
    }
    L.stages.push_back(std::move(stage));
  }
  const int cl = cfg.stage_dims.back();
  L.head_norm = b.norm("head.norm", cl);
  L.head_weight = b.add("head.fc.weight", ParamRole::kOther,
                        {cfg.num_classes, cl}, double(cfg.num_classes) * cl);
  L.head_bias = b.add("head.fc.bias", ParamRole::kOther, {cfg.num_classes});
  return L;
}

std::atomic<std::uint64_t> next_uid{1};

bool is_bias_or_norm(const std::string& id) {
  auto ends = [&](const char* s) {
    const std::string suffix(s);
    return id.size() >= suffix.size() &&
           id.compare(id.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends(".bias") || ends("norm.weight") || ends("bn.weight");
}

}  // namespace

std::vector<TensorInfo> describe(const ModelConfig& config) {
  Builder b;
  build_layout(config, b);
  return std::move(b.infos);
}

// ---------------------------------------------------------------------------
// ParamStore

template <typename T>
std::size_t ParamStore<T>::add(std::string id, ParamRole role,
                               BasicTensor<T> value) {
  if (by_id_.count(id) != 0) {
    throw Error(ErrorKind::kInvalidConfig, "duplicate parameter id '" + id + "'");
  }
  by_id_.emplace(id, params_.size());
  params_.push_back({std::move(id), role, std::move(value)});
  return params_.size() - 1;
}

template <typename T>
std::optional<std::size_t> ParamStore<T>::find(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::index(const std::string& id) const {
  auto i = find(id);
  if (!i) throw Error(ErrorKind::kInvalidConfig, "unknown parameter id '" + id + "'");
  return *i;
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
Model<T>::Model() : layout_(std::make_unique<Layout>()), uid_(next_uid++) {}

template <typename T>
Model<T>::Model(Model&&) noexcept = default;
template <typename T>
Model<T>& Model<T>::operator=(Model&&) noexcept = default;
template <typename T>
Model<T>::~Model() = default;

template <typename T>
Model<T>::Model(const Model& other)
    : config_(other.config_),
      store_(other.store_),
      layout_(std::make_unique<Layout>(*other.layout_)),
      version_(other.version_),
      uid_(next_uid++),
      conv_options_(other.conv_options_) {}

namespace {

std::uint64_t id_hash(const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

template <typename T>
Model<T> Model<T>::build(const ModelConfig& config, RngStream& rng) {
  Builder b;
  LayoutData L = build_layout(config, b);
  Model m;
  m.config_ = config;
  for (const auto& info : b.infos) {
    BasicTensor<T> t(info.shape);
    const bool is_weight = info.role == ParamRole::kDwWeight ||
                           info.role == ParamRole::kPwWeight ||
                           (info.role == ParamRole::kOther && info.macs > 0);
    if (is_weight) {
      // One stream per tensor id: weights do not shift when other tensors
      // change shape.
      RngStream stream = rng.split(id_hash(info.id));
      t = BasicTensor<T>::trunc_normal(info.shape, 0.02, stream);
    } else if (info.id.ends_with(".gamma")) {
      t.fill(static_cast<T>(config.layer_scale_init));
    } else if (info.id.ends_with("running_var") ||
               (is_bias_or_norm(info.id) && !info.id.ends_with(".bias"))) {
      t.fill(T(1));
    }
    m.store_.add(info.id, info.role, std::move(t));
  }
  m.layout_->stem = L.stem;
  m.layout_->stem_norm = L.stem_norm;
  m.layout_->stages = std::move(L.stages);
  m.layout_->head_norm = L.head_norm;
  m.layout_->head_weight = L.head_weight;
  m.layout_->head_bias = L.head_bias;
  return m;
}

template <typename T>
std::vector<std::size_t> Model<T>::indices_with_role(ParamRole role) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < store_.size(); ++i) {
    if (store_[i].role == role) out.push_back(i);
  }
  return out;
}

template <typename T>
struct ForwardCache<T>::Tape {
  struct Path {
    std::vector<BasicTensor<T>> conv_inputs;
    BatchNormCache<T> bn;
  };
  struct Block {
    std::vector<Path> paths;
    LayerNormCache<T> norm;
    BasicTensor<T> n, a, g, p;
    std::vector<T> drop;  // per-sample scale, empty when inactive
  };
  struct Stage {
    LayerNormCache<T> down_norm;
    BasicTensor<T> down_in;
    std::vector<Block> blocks;
  };
  BasicTensor<T> x;
  LayerNormCache<T> stem_norm;
  std::vector<Stage> stages;
  Shape feature_shape;
  LayerNormCache<T> head_norm;
  BasicTensor<T> head_in;
  bool linear = false;
};

template <typename T>
ForwardCache<T>::ForwardCache() = default;
template <typename T>
ForwardCache<T>::ForwardCache(ForwardCache&&) noexcept = default;
template <typename T>
ForwardCache<T>& ForwardCache<T>::operator=(ForwardCache&&) noexcept = default;
template <typename T>
ForwardCache<T>::~ForwardCache() = default;

namespace {

template <typename T>
void check_input(const BasicTensor<T>& x, const ModelConfig& cfg) {
  if (x.rank() != 4 || x.dim(1) != cfg.in_channels || x.dim(2) < 4 ||
      x.dim(3) < 4 || x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
    throw Error(ErrorKind::kInvalidShape,
                "model input must be (B, " + std::to_string(cfg.in_channels) +
                    ", H, W) with H, W positive multiples of 4; got " +
                    shape_str(x.shape()));
  }
}

// y[b, c, ...] *= s[c]
template <typename T>
void scale_channels(BasicTensor<T>& y, const BasicTensor<T>& s) {
  const std::int64_t B = y.dim(0), C = y.dim(1), HW = y.dim(2) * y.dim(3);
  T* p = y.data();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T v = s[c];
      for (std::int64_t i = 0; i < HW; ++i) *p++ *= v;
    }
  }
}

template <typename T>
void add_into(BasicTensor<T>& acc, const BasicTensor<T>& v) {
  const auto& ka = kernels::active<T>();
  ka.axpy(T(1), v.data(), acc.data(), acc.numel());
}

template <typename T>
void accumulate(BasicTensor<T>& slot, const BasicTensor<T>& g) {
  if (slot.empty()) {
    slot = g;
  } else {
    add_into(slot, g);
  }
}

}  // namespace

template <typename T>
BasicTensor<T> Model<T>::forward_features(const BasicTensor<T>& x,
                                          const ForwardOptions& opt,
                                          ForwardCache<T>* cache) {
  check_input(x, config_);
  if (opt.mode == Mode::kTrain && config_.drop_path_rate > 0 &&
      opt.drop_rng == nullptr) {
    throw Error(ErrorKind::kInvalidConfig,
                "drop_path_rate > 0 needs a drop-path stream in train mode");
  }
  using Tape = typename ForwardCache<T>::Tape;
  std::unique_ptr<Tape> tape;
  if (cache != nullptr) {
    tape = std::make_unique<Tape>();
    tape->x = x;
    tape->linear = opt.linear;
  }
  const Layout& L = *layout_;
  auto& S = store_;
  auto conv = [&](const BasicTensor<T>& in, const ConvRef& r, bool dw) {
    return conv2d_forward(in, S[r.weight].value,
                          r.bias ? &S[*r.bias].value : nullptr, r.spec,
                          dw ? conv_options_ : ConvOptions{});
  };
  auto norm = [&](const BasicTensor<T>& in, const LnRef& r,
                  LayerNormCache<T>* c) {
    return layernorm_forward(in, S[r.gamma].value, S[r.beta].value, 1e-6, c);
  };

  BasicTensor<T> h = norm(conv(x, L.stem, false), L.stem_norm,
                          tape ? &tape->stem_norm : nullptr);
  for (const StageRef& stage : L.stages) {
    typename Tape::Stage st;
    if (stage.down) {
      h = norm(h, *stage.down_norm, tape ? &st.down_norm : nullptr);
      if (tape) st.down_in = h;
      h = conv(h, *stage.down, false);
    }
    for (const BlockRef& blk : stage.blocks) {
      typename Tape::Block bt;
      BasicTensor<T> sum;
      for (const PathRef& path : blk.paths) {
        typename Tape::Path pt;
        BasicTensor<T> u = h;
        for (const ConvRef& c : path.convs) {
          if (tape) pt.conv_inputs.push_back(u);
          u = conv(u, c, true);
        }
        if (path.bn) {
          const BnRef& bn = *path.bn;
          BatchNormView<T> view{&S[bn.gamma].value, &S[bn.beta].value,
                                &S[bn.mean].value, &S[bn.var].value, 1e-5, 0.1};
          u = batchnorm_forward(u, view, opt.mode, tape ? &pt.bn : nullptr);
        }
        accumulate(sum, u);
        if (tape) bt.paths.push_back(std::move(pt));
      }
      BasicTensor<T> n = norm(sum, blk.norm, tape ? &bt.norm : nullptr);
      BasicTensor<T> a = conv(n, blk.pw1, false);
      BasicTensor<T> g = opt.linear ? a : gelu_forward(a);
      BasicTensor<T> p = conv(g, blk.pw2, false);
      if (tape) {
        bt.n = std::move(n);
        bt.a = std::move(a);
        bt.g = std::move(g);
        bt.p = p;
      }
      scale_channels(p, S[blk.gamma].value);
      if (opt.mode == Mode::kTrain && blk.drop_rate > 0) {
        const std::int64_t B = p.dim(0);
        const std::size_t per = p.numel() / std::size_t(B);
        std::vector<T> drop(static_cast<std::size_t>(B));
        for (std::int64_t b = 0; b < B; ++b) {
          const bool keep = opt.drop_rng->uniform() >= blk.drop_rate;
          drop[b] = keep ? T(1.0 / (1.0 - blk.drop_rate)) : T(0);
          for (std::size_t i = 0; i < per; ++i) p[b * per + i] *= drop[b];
        }
        if (tape) bt.drop = std::move(drop);
      }
      add_into(h, p);
      if (tape) st.blocks.push_back(std::move(bt));
    }
    if (tape) tape->stages.push_back(std::move(st));
  }
  debug_check_finite(h, "model features");
  if (cache != nullptr) {
    tape->feature_shape = h.shape();
    cache->tape = std::move(tape);
    cache->model_uid = uid_;
    cache->version = version_;
    cache->has_head = false;
  }
  return h;
}

template <typename T>
BasicTensor<T> Model<T>::forward(const BasicTensor<T>& x,
                                 const ForwardOptions& opt,
                                 ForwardCache<T>* cache) {
  BasicTensor<T> f = forward_features(x, opt, cache);
  const std::int64_t B = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
  BasicTensor<T> pooled({B, C});
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* src = f.data() + (b * C + c) * HW;
      T s = 0;
      for (std::int64_t i = 0; i < HW; ++i) s += src[i];
      pooled[b * C + c] = s / T(HW);
    }
  }
  const Layout& L = *layout_;
  using Tape = typename ForwardCache<T>::Tape;
  Tape* tape = cache ? cache->tape.get() : nullptr;
  BasicTensor<T> z =
      layernorm_forward(pooled, store_[L.head_norm.gamma].value,
                        store_[L.head_norm.beta].value, 1e-6,
                        tape ? &tape->head_norm : nullptr);
  const int K = config_.num_classes;
  BasicTensor<T> logits({B, K});
  const auto& bias = store_[L.head_bias].value;
  for (std::int64_t b = 0; b < B; ++b) {
    for (int k = 0; k < K; ++k) logits[b * K + k] = bias[k];
  }
  gemm<T>(Trans::kNo, Trans::kYes, int(B), K, int(C), T(1), z.data(), int(C),
          store_[L.head_weight].value.data(), int(C), T(1), logits.data(), K);
  if (tape) {
    tape->head_in = std::move(z);
    cache->has_head = true;
  }
  debug_check_finite(logits, "model logits");
  return logits;
}

template <typename T>
Gradients<T> Model<T>::backward(const ForwardCache<T>& cache,
                                const BasicTensor<T>& dlogits) const {
  if (cache.empty() || !cache.has_head) {
    throw Error(ErrorKind::kCache, "backward needs a cache from forward()");
  }
  const auto& tape = *cache.tape;
  const Layout& L = *layout_;
  const std::int64_t B = tape.head_in.dim(0), C = tape.head_in.dim(1);
  const int K = config_.num_classes;
  if (dlogits.shape() != Shape{B, K}) {
    throw Error(ErrorKind::kInvalidShape,
                "dlogits " + shape_str(dlogits.shape()) + ", expected " +
                    shape_str({B, K}));
  }
  if (cache.model_uid != uid_ || cache.version != version_) {
    throw Error(ErrorKind::kCache, "stale forward cache");
  }
  // Head gradients are computed here, the rest by backward_features.
  BasicTensor<T> dw({K, C}), db({K}), dz({B, C});
  gemm<T>(Trans::kYes, Trans::kNo, K, int(C), int(B), T(1), dlogits.data(), K,
          tape.head_in.data(), int(C), T(0), dw.data(), int(C));
  for (std::int64_t b = 0; b < B; ++b) {
    for (int k = 0; k < K; ++k) db[k] += dlogits[b * K + k];
  }
  gemm<T>(Trans::kNo, Trans::kNo, int(B), int(C), K, T(1), dlogits.data(), K,
          store_[L.head_weight].value.data(), int(C), T(0), dz.data(), int(C));
  NormGrads<T> hn =
      layernorm_backward(tape.head_norm, store_[L.head_norm.gamma].value, dz);
  const Shape& fs = tape.feature_shape;
  const std::int64_t HW = fs[2] * fs[3];
  BasicTensor<T> dfeat(fs);
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T v = hn.dx[b * C + c] / T(HW);
      T* dst = dfeat.data() + (b * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) dst[i] = v;
    }
  }
  Gradients<T> g = backward_features(cache, dfeat);
  g.params[L.head_weight] = std::move(dw);
  g.params[L.head_bias] = std::move(db);
  g.params[L.head_norm.gamma] = std::move(hn.dgamma);
  g.params[L.head_norm.beta] = std::move(hn.dbeta);
  return g;
}

template <typename T>
Gradients<T> Model<T>::backward_features(const ForwardCache<T>& cache,
                                         const BasicTensor<T>& dfeatures) const {
  if (cache.empty()) throw Error(ErrorKind::kCache, "empty forward cache");
  if (cache.model_uid != uid_ || cache.version != version_) {
    throw Error(ErrorKind::kCache, "stale forward cache");
  }
  const auto& tape = *cache.tape;
  if (dfeatures.shape() != tape.feature_shape) {
    throw Error(ErrorKind::kInvalidShape,
                "feature gradient " + shape_str(dfeatures.shape()) +
                    ", expected " + shape_str(tape.feature_shape));
  }
  const Layout& L = *layout_;
  const auto& S = store_;
  Gradients<T> g;
  g.params.resize(S.size());
  auto put = [&](std::size_t i, BasicTensor<T>&& v) {
    accumulate(g.params[i], v);
  };
  auto conv_back = [&](const BasicTensor<T>& in, const ConvRef& r,
                       const BasicTensor<T>& dy, bool dw) {
    ConvGrads<T> cg = conv2d_backward(in, S[r.weight].value, r.spec, dy,
                                      r.bias.has_value(),
                                      dw ? conv_options_ : ConvOptions{});
    put(r.weight, std::move(cg.dw));
    if (r.bias) put(*r.bias, std::move(cg.db));
    return std::move(cg.dx);
  };
  auto norm_back = [&](const LayerNormCache<T>& c, const LnRef& r,
                       const BasicTensor<T>& dy) {
    NormGrads<T> ng = layernorm_backward(c, S[r.gamma].value, dy);
    put(r.gamma, std::move(ng.dgamma));
    put(r.beta, std::move(ng.dbeta));
    return std::move(ng.dx);
  };

  BasicTensor<T> dh = dfeatures;
  for (std::size_t s = L.stages.size(); s-- > 0;) {
    const StageRef& stage = L.stages[s];
    const auto& st = tape.stages[s];
    for (std::size_t j = stage.blocks.size(); j-- > 0;) {
      const BlockRef& blk = stage.blocks[j];
      const auto& bt = st.blocks[j];
      BasicTensor<T> dp = dh;
      if (!bt.drop.empty()) {
        const std::size_t per = dp.numel() / bt.drop.size();
        for (std::size_t b = 0; b < bt.drop.size(); ++b) {
          for (std::size_t i = 0; i < per; ++i) dp[b * per + i] *= bt.drop[b];
        }
      }
      const std::int64_t B = dp.dim(0), C = dp.dim(1), HW = dp.dim(2) * dp.dim(3);
      BasicTensor<T> dgamma({C});
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
          const std::size_t off = std::size_t((b * C + c) * HW);
          T acc = 0;
          for (std::int64_t i = 0; i < HW; ++i) acc += dp[off + i] * bt.p[off + i];
          dgamma[c] += acc;
        }
      }
      put(blk.gamma, std::move(dgamma));
      scale_channels(dp, S[blk.gamma].value);
      BasicTensor<T> dg = conv_back(bt.g, blk.pw2, dp, false);
      BasicTensor<T> da = tape.linear ? std::move(dg) : gelu_backward(bt.a, dg);
      BasicTensor<T> dn = conv_back(bt.n, blk.pw1, da, false);
      BasicTensor<T> dsum = norm_back(bt.norm, blk.norm, dn);
      for (std::size_t k = 0; k < blk.paths.size(); ++k) {
        const PathRef& path = blk.paths[k];
        const auto& pt = bt.paths[k];
        BasicTensor<T> du = dsum;
        if (path.bn) {
          NormGrads<T> ng = batchnorm_backward(pt.bn, S[path.bn->gamma].value, du);
          put(path.bn->gamma, std::move(ng.dgamma));
          put(path.bn->beta, std::move(ng.dbeta));
          du = std::move(ng.dx);
        }
        for (std::size_t c = path.convs.size(); c-- > 0;) {
          du = conv_back(pt.conv_inputs[c], path.convs[c], du, true);
        }
        add_into(dh, du);
      }
    }
    if (stage.down) {
      dh = conv_back(st.down_in, *stage.down, dh, false);
      dh = norm_back(st.down_norm, *stage.down_norm, dh);
    }
  }
  dh = norm_back(tape.stem_norm, L.stem_norm, dh);
  g.input = conv_back(tape.x, L.stem, dh, false);
  for (std::size_t i = 0; i < S.size(); ++i) {
    if (g.params[i].empty()) g.params[i] = BasicTensor<T>(S[i].value.shape());
  }
  return g;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Model<float>;
template class Model<double>;
template struct ForwardCache<float>;
template struct ForwardCache<double>;

}  // namespace slak
