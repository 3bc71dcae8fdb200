#include "fsg/transformer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "fsg/blob_file.hpp"
#include "fsg/detail/kernels.hpp"

namespace fsg {

namespace {

constexpr std::string_view kCheckpointMagic = "FSGM";
constexpr int kCheckpointVersion = 1;

}  // namespace

void ModelConfig::validate() const {
  if (depth < 1) throw ModelError("depth must be >= 1");
  if (width < 1 || heads < 1) throw ModelError("width and heads must be >= 1");
  if (width % heads != 0) {
    throw ModelError("width " + std::to_string(width) + " is not divisible by heads " +
                     std::to_string(heads));
  }
  if (context_len < 1) throw ModelError("context_len must be >= 1");
  if (num_nodes < 1) throw ModelError("model needs at least one node");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ModelError("dropout must lie in [0, 1)");
}

nlohmann::ordered_json to_json(const ModelConfig& cfg) {
  return {{"depth", cfg.depth},         {"width", cfg.width},
          {"heads", cfg.heads},         {"context_len", cfg.context_len},
          {"num_nodes", cfg.num_nodes}, {"vocab", cfg.vocab()},
          {"dropout", cfg.dropout}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.depth = j.at("depth").get<std::size_t>();
  cfg.width = j.at("width").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.context_len = j.at("context_len").get<std::size_t>();
  cfg.num_nodes = j.at("num_nodes").get<NodeId>();
  cfg.dropout = j.at("dropout").get<double>();
  if (j.contains("vocab") && j.at("vocab").get<std::size_t>() != cfg.vocab()) {
    throw ModelError("checkpoint vocab does not match num_nodes + 1");
  }
  cfg.validate();
  return cfg;
}

void TrainHyper::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ModelError("learning rate must be positive");
  if (batch < 1) throw ModelError("batch size must be >= 1");
  if (epochs < 1) throw ModelError("epochs must be >= 1");
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) throw ModelError("min_lr_ratio must lie in [0, 1]");
  if (!(grad_clip >= 0.0)) throw ModelError("grad_clip must be >= 0 (0 disables)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ModelError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ModelError("adam epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw ModelError("weight decay must be >= 0");
}

nlohmann::ordered_json to_json(const TrainHyper& h) {
  return {{"lr", h.lr},
          {"batch", h.batch},
          {"epochs", h.epochs},
          {"seed", h.seed},
          {"warmup_steps", h.warmup_steps},
          {"min_lr_ratio", h.min_lr_ratio},
          {"grad_clip", h.grad_clip},
          {"beta1", h.beta1},
          {"beta2", h.beta2},
          {"adam_eps", h.adam_eps},
          {"weight_decay", h.weight_decay}};
}

nlohmann::ordered_json to_json(const TrainReport& r, bool include_steps) {
  nlohmann::ordered_json j = {{"epochs", r.epochs},
                              {"steps", r.steps},
                              {"tokens_per_epoch", r.tokens_per_epoch},
                              {"final_cross_entropy", r.final_cross_entropy},
                              {"epoch_cross_entropy", r.epoch_cross_entropy},
                              {"wall_seconds", r.wall_seconds},
                              {"parameter_count", r.parameter_count}};
  if (include_steps) j["step_loss"] = r.step_loss;
  return j;
}

// ---------------------------------------------------------------- layout

ParameterLayout::ParameterLayout(const ModelConfig& cfg) {
  const std::size_t w = cfg.width;
  add("tok_emb", {cfg.vocab(), w});
  add("pos_emb", {cfg.positions(), w});
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    add(p + "ln1.gain", {w});
    add(p + "ln1.bias", {w});
    add(p + "attn.qkv.weight", {w, 3 * w});
    add(p + "attn.qkv.bias", {3 * w});
    add(p + "attn.out.weight", {w, w});
    add(p + "attn.out.bias", {w});
    add(p + "ln2.gain", {w});
    add(p + "ln2.bias", {w});
    add(p + "mlp.fc.weight", {w, 4 * w});
    add(p + "mlp.fc.bias", {4 * w});
    add(p + "mlp.proj.weight", {4 * w, w});
    add(p + "mlp.proj.bias", {w});
  }
  add("final_ln.gain", {w});
  add("final_ln.bias", {w});
}

void ParameterLayout::add(std::string name, std::vector<std::size_t> shape) {
  std::size_t size = 1;
  for (auto d : shape) size *= d;
  tensors_.push_back({std::move(name), std::move(shape), total_, size});
  total_ += size;
}

const TensorSpec& ParameterLayout::at(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw ModelError("no parameter tensor named " + name);
}

namespace detail {

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_g, ln2_b, fc_w, fc_b, proj_w, proj_b;
};

struct ModelOffsets {
  std::size_t tok, pos, lnf_g, lnf_b;
  std::vector<LayerOffsets> layers;

  ModelOffsets(const ModelConfig& cfg, const ParameterLayout& layout) {
    tok = layout.at("tok_emb").offset;
    pos = layout.at("pos_emb").offset;
    lnf_g = layout.at("final_ln.gain").offset;
    lnf_b = layout.at("final_ln.bias").offset;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      layers.push_back({layout.at(p + "ln1.gain").offset, layout.at(p + "ln1.bias").offset,
                        layout.at(p + "attn.qkv.weight").offset, layout.at(p + "attn.qkv.bias").offset,
                        layout.at(p + "attn.out.weight").offset, layout.at(p + "attn.out.bias").offset,
                        layout.at(p + "ln2.gain").offset, layout.at(p + "ln2.bias").offset,
                        layout.at(p + "mlp.fc.weight").offset, layout.at(p + "mlp.fc.bias").offset,
                        layout.at(p + "mlp.proj.weight").offset, layout.at(p + "mlp.proj.bias").offset});
    }
  }
};

}  // namespace detail

namespace {

using detail::ModelOffsets;

bool is_projection(const std::string& name) {
  return name.ends_with("attn.out.weight") || name.ends_with("mlp.proj.weight");
}

}  // namespace

std::vector<float> initial_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const ParameterLayout layout(cfg);
  std::vector<float> params(layout.total(), 0.0f);
  Rng rng(tagged_seed(seed, StreamTag::model_init));
  const double proj_std = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg.depth));
  for (const auto& t : layout.tensors()) {
    float* p = params.data() + t.offset;
    if (t.name.ends_with(".gain")) {
      std::fill(p, p + t.size, 1.0f);
    } else if (t.name.ends_with(".bias")) {
      // zero
    } else {
      const double std = is_projection(t.name) ? proj_std : 0.02;
      for (std::size_t i = 0; i < t.size; ++i) p[i] = static_cast<float>(std * rng.normal());
    }
  }
  return params;
}

// ---------------------------------------------------------------- inference

namespace {

class AttentionState final : public DecodeState {
 public:
  explicit AttentionState(const ModelConfig& cfg) {
    const std::size_t p = cfg.positions();
    const std::size_t w = cfg.width;
    k.assign(cfg.depth * p * w, 0.0f);
    v.assign(cfg.depth * p * w, 0.0f);
    x.resize(p * w);
    a.resize(p * w);
    qkv.resize(p * 3 * w);
    att.resize(p * w);
    tmp.resize(p * w);
    hidden.resize(p * 4 * w);
    scores.resize(p);
  }
  std::size_t length() const override { return len; }
  // Cached rows at or past `len` are never read, so nothing to clear.
  void reset() override { len = 0; }

  std::size_t len = 0;
  aligned_vector<float> k, v;
  aligned_vector<float> x, a, qkv, att, tmp, hidden, scores;
};

}  // namespace

TransformerModel::TransformerModel(ModelConfig cfg, std::vector<float> params)
    : cfg_(cfg),
      layout_((cfg.validate(), cfg)),
      params_(params.begin(), params.end()),
      offsets_(std::make_unique<ModelOffsets>(cfg_, layout_)) {
  if (params_.size() != layout_.total()) {
    throw ModelError("parameter vector has " + std::to_string(params_.size()) + " entries, expected " +
                     std::to_string(layout_.total()));
  }
}

TransformerModel::~TransformerModel() = default;

std::unique_ptr<TransformerModel> TransformerModel::initialize(const ModelConfig& cfg,
                                                               std::uint64_t seed) {
  return std::make_unique<TransformerModel>(cfg, initial_parameters(cfg, seed));
}

std::unique_ptr<DecodeState> TransformerModel::new_state() const {
  return std::make_unique<AttentionState>(cfg_);
}

void TransformerModel::do_advance(DecodeState& base, std::span<const Token> tokens,
                                  std::span<double> logits) const {
  auto& st = static_cast<AttentionState&>(base);
  const std::size_t w = cfg_.width;
  const std::size_t dh = w / cfg_.heads;
  const std::size_t plen = cfg_.positions();
  const std::size_t n = tokens.size();
  const std::size_t p0 = st.len;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const float* P = params_.data();
  const ModelOffsets& off = *offsets_;

  for (std::size_t r = 0; r < n; ++r) {
    const float* te = P + off.tok + std::size_t{tokens[r]} * w;
    const float* pe = P + off.pos + (p0 + r) * w;
    for (std::size_t i = 0; i < w; ++i) st.x[r * w + i] = te[i] + pe[i];
  }

  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    const auto& L = off.layers[l];
    float* kc = st.k.data() + l * plen * w;
    float* vc = st.v.data() + l * plen * w;
    for (std::size_t r = 0; r < n; ++r) {
      kernels::layer_norm(&st.x[r * w], P + L.ln1_g, P + L.ln1_b, w, &st.a[r * w]);
    }
    kernels::linear(st.a.data(), n, w, P + L.qkv_w, P + L.qkv_b, 3 * w, st.qkv.data());
    for (std::size_t r = 0; r < n; ++r) {
      const float* row = &st.qkv[r * 3 * w];
      std::copy(row + w, row + 2 * w, kc + (p0 + r) * w);
      std::copy(row + 2 * w, row + 3 * w, vc + (p0 + r) * w);
    }
    // Past the last layer's cache only the final row feeds the output.
    const std::size_t first = l + 1 == cfg_.depth ? n - 1 : 0;
    const std::size_t rows = n - first;
    for (std::size_t r = first; r < n; ++r) {
      for (std::size_t h = 0; h < cfg_.heads; ++h) {
        kernels::attend(&st.qkv[r * 3 * w + h * dh], kc + h * dh, vc + h * dh, p0 + r + 1, w, dh,
                        scale, st.scores.data(), &st.att[(r - first) * w + h * dh]);
      }
    }
    float* x = &st.x[first * w];
    kernels::linear(st.att.data(), rows, w, P + L.out_w, P + L.out_b, w, st.tmp.data());
    for (std::size_t i = 0; i < rows * w; ++i) x[i] += st.tmp[i];
    for (std::size_t r = 0; r < rows; ++r) {
      kernels::layer_norm(x + r * w, P + L.ln2_g, P + L.ln2_b, w, &st.a[r * w]);
    }
    kernels::linear(st.a.data(), rows, w, P + L.fc_w, P + L.fc_b, 4 * w, st.hidden.data());
    kernels::gelu(st.hidden.data(), rows * 4 * w);
    kernels::linear(st.hidden.data(), rows, 4 * w, P + L.proj_w, P + L.proj_b, w, st.tmp.data());
    for (std::size_t i = 0; i < rows * w; ++i) x[i] += st.tmp[i];
  }

  const float* last = &st.x[(n - 1) * w];
  kernels::layer_norm(last, P + off.lnf_g, P + off.lnf_b, w, st.a.data());
  for (std::size_t v = 0; v < cfg_.vocab(); ++v) {
    logits[v] = kernels::dot(st.a.data(), P + off.tok + v * w, w);
  }
  st.len += n;
}

// ---------------------------------------------------------------- checkpoint

void TransformerModel::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nlohmann::ordered_json header;
  header["format_version"] = kCheckpointVersion;
  header["kind"] = to_string(kind());
  header["config"] = to_json(cfg_);
  auto& tensors = header["tensors"] = nlohmann::ordered_json::array();
  for (const auto& t : layout_.tensors()) tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  header["dtype"] = "f32le";
  header["extra"] = extra;
  std::string payload;
  io::append_span(payload, std::span<const float>(params_));
  io::write_blob_file(path, kCheckpointMagic, nlohmann::json::parse(header.dump()), payload);
}

std::unique_ptr<TransformerModel> TransformerModel::load(const std::filesystem::path& path,
                                                         nlohmann::json* extra) {
  const auto blob = io::read_blob_file(path, kCheckpointMagic);
  const auto& h = blob.header;
  const auto where = path.string() + ": ";
  try {
    if (h.at("format_version").get<int>() != kCheckpointVersion) {
      throw io::FormatError(where + "unsupported checkpoint version");
    }
    if (h.at("kind").get<std::string>() != "attention") {
      throw io::FormatError(where + "not an attention-model checkpoint");
    }
    if (h.at("dtype").get<std::string>() != "f32le") throw io::FormatError(where + "unsupported dtype");
    const ModelConfig cfg = model_config_from_json(h.at("config"));
    const ParameterLayout layout(cfg);
    const auto& tensors = h.at("tensors");
    if (tensors.size() != layout.tensors().size()) {
      throw io::FormatError(where + "tensor count does not match config");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& expected = layout.tensors()[i];
      if (tensors[i].at("name").get<std::string>() != expected.name ||
          tensors[i].at("shape").get<std::vector<std::size_t>>() != expected.shape) {
        throw io::FormatError(where + "tensor " + std::to_string(i) + " (" +
                              tensors[i].at("name").get<std::string>() +
                              ") does not match the config's shape for " + expected.name);
      }
    }
    if (blob.payload.size() != layout.total() * sizeof(float)) {
      throw io::FormatError(where + "payload size does not match declared tensors");
    }
    std::vector<float> params(layout.total());
    std::memcpy(params.data(), blob.payload.data(), blob.payload.size());
    if (extra) *extra = h.value("extra", nlohmann::json::object());
    return std::make_unique<TransformerModel>(cfg, std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw io::FormatError(where + "malformed checkpoint header: " + e.what());
  } catch (const ModelError& e) {
    throw io::FormatError(where + e.what());
  }
}

// ---------------------------------------------------------------- training

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MapC = Eigen::Map<const Mat<T>>;
template <typename T>
using Map = Eigen::Map<Mat<T>>;
template <typename T>
using VMapC = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using VMap = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;

constexpr double kLnEps = 1e-5;

template <typename T>
void ln_forward(const Mat<T>& x, const T* gain, const T* bias, Mat<T>& xhat, Vec<T>& rstd,
                Mat<T>& y) {
  const auto n = x.rows();
  const auto w = x.cols();
  xhat.resize(n, w);
  y.resize(n, w);
  rstd.resize(n);
  const VMapC<T> g(gain, w);
  const VMapC<T> b(bias, w);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    rstd(r) = T(1) / std::sqrt(var + T(kLnEps));
    xhat.row(r) = (x.row(r).array() - mean) * rstd(r);
    y.row(r) = xhat.row(r).cwiseProduct(g) + b;
  }
}

template <typename T>
void ln_backward(const Mat<T>& dy, const Mat<T>& xhat, const Vec<T>& rstd, const T* gain, T* dgain,
                 T* dbias, Mat<T>& dx) {
  const auto n = dy.rows();
  const auto w = dy.cols();
  const VMapC<T> g(gain, w);
  VMap<T> dg(dgain, w);
  VMap<T> db(dbias, w);
  dg += dy.cwiseProduct(xhat).colwise().sum();
  db += dy.colwise().sum();
  dx.resize(n, w);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto dxhat = dy.row(r).cwiseProduct(g);
    const T m1 = dxhat.mean();
    const T m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) = rstd(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
  }
}

template <typename T>
struct LayerCache {
  Mat<T> xhat1, a1, qkv, probs, att, xhat2, a2, pre, tanh, act, mask1, mask2;
  Vec<T> rstd1, rstd2;
};

struct BatchView {
  const WalkMatrix* corpus;
  std::span<const std::size_t> rows;
};

// c (x + 0.044715 x^3) of the tanh approximation.
template <typename T>
Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gelu_inner(const Mat<T>& x) {
  constexpr T c = T(0.7978845608028654);
  return c * (x.array() + T(0.044715) * x.array().cube());
}

// Returns the mean token cross-entropy; accumulates gradients into `grad`
// when non-null. Dropout is applied only when `rng` is given.
template <typename T>
double forward_backward(const ModelConfig& cfg, const ModelOffsets& off, const T* P, const BatchView& batch,
                        T* grad, double dropout, Rng* rng) {
  const std::size_t w = cfg.width;
  const std::size_t H = cfg.heads;
  const std::size_t dh = w / H;
  const std::size_t B = batch.rows.size();
  const std::size_t Tn = batch.corpus->walk_length();
  const std::size_t N = B * Tn;
  const std::size_t V = cfg.vocab();
  const Token start = cfg.num_nodes;
  const T scale = T(1) / std::sqrt(T(dh));

  std::vector<Token> inputs(N);
  std::vector<Token> targets(N);
  for (std::size_t b = 0; b < B; ++b) {
    const auto walk = batch.corpus->row(batch.rows[b]);
    for (std::size_t t = 0; t < Tn; ++t) {
      inputs[b * Tn + t] = t == 0 ? start : walk[t - 1];
      targets[b * Tn + t] = walk[t];
    }
  }

  const MapC<T> tok(P + off.tok, V, w);
  const MapC<T> pos(P + off.pos, cfg.positions(), w);
  Mat<T> x(N, w);
  for (std::size_t i = 0; i < N; ++i) x.row(i) = tok.row(inputs[i]) + pos.row(i % Tn);

  const bool use_dropout = rng != nullptr && dropout > 0.0;
  auto make_mask = [&](Mat<T>& mask) {
    mask.resize(N, w);
    const T keep_scale = T(1.0 / (1.0 - dropout));
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.data()[i] = rng->uniform() < dropout ? T(0) : keep_scale;
    }
  };

  std::vector<LayerCache<T>> caches(cfg.depth);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const auto& L = off.layers[l];
    auto& c = caches[l];
    ln_forward<T>(x, P + L.ln1_g, P + L.ln1_b, c.xhat1, c.rstd1, c.a1);
    c.qkv = c.a1 * MapC<T>(P + L.qkv_w, w, 3 * w);
    c.qkv.rowwise() += VMapC<T>(P + L.qkv_b, 3 * w);
    c.probs.resize(B * H * Tn, Tn);
    c.att.resize(N, w);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const auto q = c.qkv.block(b * Tn, h * dh, Tn, dh);
        const auto k = c.qkv.block(b * Tn, w + h * dh, Tn, dh);
        const auto v = c.qkv.block(b * Tn, 2 * w + h * dh, Tn, dh);
        auto p = c.probs.block((b * H + h) * Tn, 0, Tn, Tn);
        p.noalias() = (q * k.transpose()) * scale;
        for (std::size_t i = 0; i < Tn; ++i) {
          const T m = p.row(i).head(i + 1).maxCoeff();
          T s = 0;
          for (std::size_t j = 0; j <= i; ++j) {
            p(i, j) = std::exp(p(i, j) - m);
            s += p(i, j);
          }
          for (std::size_t j = 0; j <= i; ++j) p(i, j) /= s;
          for (std::size_t j = i + 1; j < Tn; ++j) p(i, j) = T(0);
        }
        c.att.block(b * Tn, h * dh, Tn, dh).noalias() = p * v;
      }
    }
    Mat<T> y = c.att * MapC<T>(P + L.out_w, w, w);
    y.rowwise() += VMapC<T>(P + L.out_b, w);
    if (use_dropout) {
      make_mask(c.mask1);
      y.array() *= c.mask1.array();
    }
    x += y;
    ln_forward<T>(x, P + L.ln2_g, P + L.ln2_b, c.xhat2, c.rstd2, c.a2);
    c.pre = c.a2 * MapC<T>(P + L.fc_w, w, 4 * w);
    c.pre.rowwise() += VMapC<T>(P + L.fc_b, 4 * w);
    c.tanh = gelu_inner(c.pre).tanh();
    c.act = (T(0.5) * c.pre.array() * (T(1) + c.tanh.array())).matrix();
    Mat<T> z = c.act * MapC<T>(P + L.proj_w, 4 * w, w);
    z.rowwise() += VMapC<T>(P + L.proj_b, w);
    if (use_dropout) {
      make_mask(c.mask2);
      z.array() *= c.mask2.array();
    }
    x += z;
  }

  Mat<T> xhatf, f;
  Vec<T> rstdf;
  ln_forward<T>(x, P + off.lnf_g, P + off.lnf_b, xhatf, rstdf, f);
  Mat<T> logits = f * tok.transpose();
  double loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    auto row = logits.row(i);
    const T m = row.maxCoeff();
    row.array() = (row.array() - m).exp();
    const T s = row.sum();
    row /= s;
    loss -= std::log(static_cast<double>(row(targets[i])));
  }
  loss /= static_cast<double>(N);
  if (!grad) return loss;

  // logits now hold probabilities; turn them into dL/dlogits.
  Mat<T>& dlogits = logits;
  for (std::size_t i = 0; i < N; ++i) dlogits(i, targets[i]) -= T(1);
  dlogits /= T(N);

  Map<T> gtok(grad + off.tok, V, w);
  Map<T> gpos(grad + off.pos, cfg.positions(), w);
  gtok.noalias() += dlogits.transpose() * f;
  Mat<T> df = dlogits * tok;
  Mat<T> dx;
  ln_backward<T>(df, xhatf, rstdf, P + off.lnf_g, grad + off.lnf_g, grad + off.lnf_b, dx);

  Mat<T> tmp;
  for (std::size_t li = cfg.depth; li-- > 0;) {
    const auto& L = off.layers[li];
    auto& c = caches[li];
    // MLP branch.
    Mat<T> dz = dx;
    if (use_dropout) dz.array() *= c.mask2.array();
    Map<T>(grad + L.proj_w, 4 * w, w).noalias() += c.act.transpose() * dz;
    VMap<T>(grad + L.proj_b, w) += dz.colwise().sum();
    Mat<T> dpre = dz * MapC<T>(P + L.proj_w, 4 * w, w).transpose();
    {
      constexpr T k = T(0.7978845608028654);
      const auto x = c.pre.array();
      const auto t = c.tanh.array();
      dpre.array() *= T(0.5) * (T(1) + t) +
                      T(0.5) * x * (T(1) - t * t) * k * (T(1) + T(3 * 0.044715) * x * x);
    }
    Map<T>(grad + L.fc_w, w, 4 * w).noalias() += c.a2.transpose() * dpre;
    VMap<T>(grad + L.fc_b, 4 * w) += dpre.colwise().sum();
    Mat<T> da2 = dpre * MapC<T>(P + L.fc_w, w, 4 * w).transpose();
    ln_backward<T>(da2, c.xhat2, c.rstd2, P + L.ln2_g, grad + L.ln2_g, grad + L.ln2_b, tmp);
    dx += tmp;

    // Attention branch.
    Mat<T> dy = dx;
    if (use_dropout) dy.array() *= c.mask1.array();
    Map<T>(grad + L.out_w, w, w).noalias() += c.att.transpose() * dy;
    VMap<T>(grad + L.out_b, w) += dy.colwise().sum();
    Mat<T> datt = dy * MapC<T>(P + L.out_w, w, w).transpose();
    Mat<T> dqkv(N, 3 * w);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const auto q = c.qkv.block(b * Tn, h * dh, Tn, dh);
        const auto k = c.qkv.block(b * Tn, w + h * dh, Tn, dh);
        const auto v = c.qkv.block(b * Tn, 2 * w + h * dh, Tn, dh);
        const auto p = c.probs.block((b * H + h) * Tn, 0, Tn, Tn);
        const auto dout = datt.block(b * Tn, h * dh, Tn, dh);
        Mat<T> dp = dout * v.transpose();
        dqkv.block(b * Tn, 2 * w + h * dh, Tn, dh).noalias() = p.transpose() * dout;
        Mat<T> ds = p.cwiseProduct(dp);
        const Vec<T> rowdot = ds.rowwise().sum();
        ds -= p.cwiseProduct(rowdot.replicate(1, Tn));
        ds *= scale;
        dqkv.block(b * Tn, h * dh, Tn, dh).noalias() = ds * k;
        dqkv.block(b * Tn, w + h * dh, Tn, dh).noalias() = ds.transpose() * q;
      }
    }
    Map<T>(grad + L.qkv_w, w, 3 * w).noalias() += c.a1.transpose() * dqkv;
    VMap<T>(grad + L.qkv_b, 3 * w) += dqkv.colwise().sum();
    Mat<T> da1 = dqkv * MapC<T>(P + L.qkv_w, w, 3 * w).transpose();
    ln_backward<T>(da1, c.xhat1, c.rstd1, P + L.ln1_g, grad + L.ln1_g, grad + L.ln1_b, tmp);
    dx += tmp;
  }

  for (std::size_t i = 0; i < N; ++i) {
    gtok.row(inputs[i]) += dx.row(i);
    gpos.row(i % Tn) += dx.row(i);
  }
  return loss;
}

void check_corpus(const WalkMatrix& corpus, const ModelConfig& cfg) {
  if (corpus.num_walks() == 0 || corpus.walk_length() == 0) throw ModelError("empty training corpus");
  if (cfg.context_len + 1 < corpus.walk_length()) {
    throw ModelError("context_len " + std::to_string(cfg.context_len) +
                     " is shorter than walk length - 1 = " +
                     std::to_string(corpus.walk_length() - 1));
  }
  for (NodeId v : corpus.data()) {
    if (v >= cfg.num_nodes) {
      throw ModelError("corpus node " + std::to_string(v) + " is outside the model vocabulary (" +
                       std::to_string(cfg.num_nodes) + " nodes)");
    }
  }
}

double learning_rate(const TrainHyper& h, std::size_t step, std::size_t total_steps) {
  if (step < h.warmup_steps) {
    return h.lr * static_cast<double>(step + 1) / static_cast<double>(h.warmup_steps);
  }
  const double span = static_cast<double>(std::max<std::size_t>(1, total_steps - h.warmup_steps));
  const double progress = std::min(1.0, static_cast<double>(step - h.warmup_steps) / span);
  const double cosine = 0.5 * (1.0 + std::cos(M_PI * progress));
  return h.lr * (h.min_lr_ratio + (1.0 - h.min_lr_ratio) * cosine);
}

}  // namespace

double batch_loss(const ModelConfig& cfg, std::span<const double> params, const WalkMatrix& corpus,
                  std::span<const std::size_t> rows, std::vector<double>* grad) {
  cfg.validate();
  check_corpus(corpus, cfg);
  const ParameterLayout layout(cfg);
  if (params.size() != layout.total()) throw ModelError("parameter vector size mismatch");
  for (auto r : rows) {
    if (r >= corpus.num_walks()) throw ModelError("batch row out of range");
  }
  if (rows.empty()) throw ModelError("empty batch");
  const ModelOffsets off(cfg, layout);
  if (grad) grad->assign(layout.total(), 0.0);
  return forward_backward<double>(cfg, off, params.data(), BatchView{&corpus, rows},
                                  grad ? grad->data() : nullptr, 0.0, nullptr);
}

TrainResult train_transformer(const WalkMatrix& corpus, const ModelConfig& cfg, const TrainHyper& hyper,
                              const std::function<void(const TrainProgress&)>& on_epoch) {
  cfg.validate();
  hyper.validate();
  check_corpus(corpus, cfg);
  const auto started = std::chrono::steady_clock::now();
  const ParameterLayout layout(cfg);
  const ModelOffsets off(cfg, layout);
  const std::vector<float> init = initial_parameters(cfg, hyper.seed);
  aligned_vector<float> params(init.begin(), init.end());
  aligned_vector<float> grad(params.size());
  aligned_vector<float> m1(params.size(), 0.0f);
  aligned_vector<float> m2(params.size(), 0.0f);

  const std::size_t m = corpus.num_walks();
  const std::size_t steps_per_epoch = (m + hyper.batch - 1) / hyper.batch;
  const std::size_t total_steps = steps_per_epoch * hyper.epochs;
  const std::uint64_t train_seed = tagged_seed(hyper.seed, StreamTag::training);

  TrainReport report;
  report.parameter_count = layout.total();
  report.tokens_per_epoch = static_cast<std::uint64_t>(m) * corpus.walk_length();
  report.step_loss.reserve(total_steps);

  std::vector<std::size_t> order(m);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    Rng order_rng(stream_seed(train_seed, 2 * epoch));
    Rng drop_rng(stream_seed(train_seed, 2 * epoch + 1));
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    for (std::size_t i = m; i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);

    double epoch_loss = 0.0;
    std::size_t epoch_rows = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t begin = s * hyper.batch;
      const std::size_t end = std::min(m, begin + hyper.batch);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      std::fill(grad.begin(), grad.end(), 0.0f);
      const double loss = forward_backward<float>(cfg, off, params.data(), BatchView{&corpus, rows},
                                                  grad.data(), cfg.dropout,
                                                  cfg.dropout > 0.0 ? &drop_rng : nullptr);
      double norm_sq = 0.0;
      for (float g : grad) norm_sq += static_cast<double>(g) * g;
      const double norm = std::sqrt(norm_sq);
      if (!std::isfinite(loss) || !std::isfinite(norm)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << " step " << step << " (loss " << loss
            << ", gradient norm " << norm << ", lr " << learning_rate(hyper, step, total_steps)
            << ", last finite loss "
            << (report.step_loss.empty() ? std::nan("") : report.step_loss.back())
            << "); lower the learning rate or raise warmup";
        throw TrainingError(msg.str());
      }
      report.step_loss.push_back(loss);
      epoch_loss += loss * static_cast<double>(rows.size());
      epoch_rows += rows.size();

      const double clip = hyper.grad_clip > 0.0 && norm > hyper.grad_clip ? hyper.grad_clip / norm : 1.0;
      const double lr = learning_rate(hyper, step, total_steps);
      const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step + 1));
      const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step + 1));
      const auto b1 = static_cast<float>(hyper.beta1);
      const auto b2 = static_cast<float>(hyper.beta2);
      const auto lr_t = static_cast<float>(lr * std::sqrt(bc2) / bc1);
      const auto eps = static_cast<float>(hyper.adam_eps * std::sqrt(bc2));
      const auto decay = static_cast<float>(lr * hyper.weight_decay);
      const auto fclip = static_cast<float>(clip);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const float g = grad[i] * fclip;
        m1[i] = b1 * m1[i] + (1.0f - b1) * g;
        m2[i] = b2 * m2[i] + (1.0f - b2) * g * g;
        params[i] -= lr_t * m1[i] / (std::sqrt(m2[i]) + eps) + decay * params[i];
      }
    }
    const double ce = epoch_loss / static_cast<double>(epoch_rows);
    report.epoch_cross_entropy.push_back(ce);
    if (on_epoch) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      on_epoch(TrainProgress{epoch + 1, step, ce, secs, params});
    }
  }
  report.epochs = hyper.epochs;
  report.steps = step;
  report.final_cross_entropy = report.epoch_cross_entropy.back();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return TrainResult{std::make_unique<TransformerModel>(cfg, std::vector<float>(params.begin(), params.end())),
                     std::move(report)};
}

}  // namespace fsg
