#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dpmn/autograd.hpp"
#include "dpmn/checkpoint.hpp"
#include "dpmn/error.hpp"
#include "dpmn/features.hpp"
#include "dpmn/hierarchy.hpp"
#include "dpmn/mixture.hpp"

namespace dpmn {

enum class Activation { relu, softplus, tanh };

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  if (s == "tanh") return Activation::tanh;
  throw InputError("model config: unknown activation '" + s + "'");
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

struct ModelConfig {
  std::size_t n_components = 4;
  std::size_t conv_filters = 8;                // N_cf
  std::size_t kernel_width = 7;
  std::vector<std::size_t> dilations{1, 7};    // one conv layer per entry
  std::size_t static_width = 8;                // N_s
  std::size_t future_width = 8;                // N_f
  std::size_t embedding_dim = 4;
  std::size_t context_agnostic = 16;           // N_ag
  std::size_t context_specific = 16;           // N_sp
  std::size_t decoder_hidden = 32;
  Activation activation = Activation::relu;

  void validate() const {
    auto pos = [](std::size_t v, const char* what) {
      if (v == 0) throw InputError(std::string("model config: ") + what + " must be >= 1");
    };
    pos(n_components, "n_components");
    pos(conv_filters, "conv_filters");
    pos(kernel_width, "kernel_width");
    pos(context_agnostic, "context_agnostic");
    pos(context_specific, "context_specific");
    pos(decoder_hidden, "decoder_hidden");
    if (dilations.empty()) throw InputError("model config: at least one dilation is required");
    for (auto d : dilations) pos(d, "every dilation");
  }
};

inline ModelConfig parse_model_config(const nlohmann::ordered_json& j) {
  ModelConfig c;
  if (!j.is_object()) throw InputError("model config: expected an object");
  detail::reject_unknown_keys(j,
                              {"n_components", "conv_filters", "kernel_width", "dilations", "static_width", "future_width",
                               "embedding_dim", "context_agnostic", "context_specific", "decoder_hidden", "activation"},
                              "model config");
  try {
    auto get = [&](const char* key, std::size_t& field) {
      if (j.contains(key)) field = j.at(key).get<std::size_t>();
    };
    get("n_components", c.n_components);
    get("conv_filters", c.conv_filters);
    get("kernel_width", c.kernel_width);
    get("static_width", c.static_width);
    get("future_width", c.future_width);
    get("embedding_dim", c.embedding_dim);
    get("context_agnostic", c.context_agnostic);
    get("context_specific", c.context_specific);
    get("decoder_hidden", c.decoder_hidden);
    if (j.contains("dilations")) c.dilations = j.at("dilations").get<std::vector<std::size_t>>();
    if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"n_components", c.n_components},         {"conv_filters", c.conv_filters},
          {"kernel_width", c.kernel_width},         {"dilations", c.dilations},
          {"static_width", c.static_width},         {"future_width", c.future_width},
          {"embedding_dim", c.embedding_dim},       {"context_agnostic", c.context_agnostic},
          {"context_specific", c.context_specific}, {"decoder_hidden", c.decoder_hidden},
          {"activation", to_string(c.activation)}};
}

/// Channel counts of a FeatureBundle; fixes the parameter shapes.
struct InputDims {
  std::size_t n_bottom = 0, horizon = 0;
  std::size_t static_bottom = 0, static_shared = 0;
  std::size_t hist_bottom = 0, hist_shared = 0;
  std::size_t fut_bottom = 0, fut_shared = 0;

  static InputDims of(const FeatureBundle& fb) {
    return {fb.n_bottom,           fb.horizon,           fb.static_bottom.cols(),  fb.static_shared.size(),
            fb.hist_bottom_channels, fb.hist_shared_channels, fb.fut_bottom_channels, fb.fut_shared_channels};
  }
  bool operator==(const InputDims&) const = default;
};

/// Creation indices whose h-step target window lies inside `history` steps:
/// t = 0 .. history - h - 1 (observations 0..t known, targets t+1..t+h).
inline std::vector<std::size_t> valid_creation_indices(std::size_t history, std::size_t h) {
  if (h == 0 || history <= h) throw std::invalid_argument("no creation index leaves a full target window");
  std::vector<std::size_t> out(history - h);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

/// Mixture parameters for D creation dates.
struct ForkedOutput {
  ag::Tensor rates;    // [D, N_b, K, h]
  ag::Tensor weights;  // [D, K]
  std::vector<std::size_t> creation;

  PoissonMixtureForecast forecast(std::size_t d) const {
    const std::size_t nb = rates.dim(1), nk = rates.dim(2), hz = rates.dim(3);
    const auto& r = rates.values();
    const auto& w = weights.values();
    std::vector<double> wd(w.begin() + d * nk, w.begin() + (d + 1) * nk);
    double s = 0.0;
    for (double v : wd) s += v;
    for (auto& v : wd) v /= s;
    std::vector<double> rd(r.begin() + d * nb * nk * hz, r.begin() + (d + 1) * nb * nk * hz);
    return PoissonMixtureForecast(std::move(wd), nb, hz, std::move(rd));
  }
};

/// Encoder contexts for D creation dates.
struct Contexts {
  ag::Tensor h1;  // [D, N_b, 2 N_cf + 2 N_s + N_f]
  ag::Tensor h2;  // [D, N_cf + N_s]
};

class DpmnModel {
 public:
  struct Dense {
    ag::Tensor w;  // [in, out]
    ag::Tensor b;  // [out]
  };
  struct Conv {
    ag::Tensor k;  // [out, in, kw]
    ag::Tensor b;  // [out]
    std::size_t dilation = 1;
  };

  /// `rate_scale` holds one positive multiplier per bottom series; the
  /// decoder's softplus output is measured in those units.
  DpmnModel(ModelConfig cfg, InputDims dims, std::vector<double> rate_scale, std::uint64_t seed)
      : cfg_(std::move(cfg)), dims_(dims), rate_scale_(std::move(rate_scale)) {
    cfg_.validate();
    if (dims_.n_bottom == 0 || dims_.horizon == 0) throw std::invalid_argument("model: need bottoms and a horizon");
    if (rate_scale_.size() != dims_.n_bottom) throw std::invalid_argument("model: one rate scale per bottom series required");
    for (double s : rate_scale_)
      if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("model: rate scales must be positive");
    std::mt19937_64 rng(seed);
    const std::size_t ncf = cfg_.conv_filters, ns = cfg_.static_width, nf = cfg_.future_width, hz = dims_.horizon;
    std::size_t cin = dims_.hist_bottom;
    for (std::size_t l = 0; l < cfg_.dilations.size(); ++l) {
      conv_bottom_.push_back(make_conv("enc.conv_bottom." + std::to_string(l), cin, ncf, cfg_.dilations[l], rng));
      cin = ncf;
    }
    cin = dims_.hist_shared;
    for (std::size_t l = 0; l < cfg_.dilations.size(); ++l) {
      conv_shared_.push_back(make_conv("enc.conv_shared." + std::to_string(l), cin, ncf, cfg_.dilations[l], rng));
      cin = ncf;
    }
    embedding_ = add_param("enc.embedding", {dims_.n_bottom, cfg_.embedding_dim}, glorot(rng, dims_.n_bottom, cfg_.embedding_dim,
                                                                                        dims_.n_bottom * cfg_.embedding_dim));
    static_bottom_ = make_dense("enc.static_bottom", dims_.static_bottom + cfg_.embedding_dim, ns, rng);
    static_shared_ = make_dense("enc.static_shared", dims_.static_shared, ns, rng);
    future_ = make_dense("enc.future", hz * (dims_.fut_bottom + dims_.fut_shared), nf, rng);
    const std::size_t c1 = 2 * ncf + 2 * ns + nf, c2 = ncf + ns;
    ctx_ag1_ = make_dense("dec.context_agnostic1", c1, cfg_.context_agnostic, rng);
    ctx_ag2_ = make_dense("dec.context_agnostic2", c2, cfg_.context_agnostic, rng);
    ctx_sp_ = make_dense("dec.context_specific", c1, cfg_.context_specific * hz, rng);
    const std::size_t rin = cfg_.context_agnostic + cfg_.context_specific + dims_.fut_bottom + dims_.fut_shared;
    rate_hidden_ = make_dense("dec.rate_hidden", rin, cfg_.decoder_hidden, rng);
    rate_out_ = make_dense("dec.rate_out", cfg_.decoder_hidden, cfg_.n_components, rng, 0.1);
    // softplus(log(e - 1)) = 1: initial rates equal the series scale
    for (auto& v : rate_out_.b.mutable_values()) v = std::log(std::exp(1.0) - 1.0);
    weight_hidden_ = make_dense("dec.weight_hidden", cfg_.context_agnostic, cfg_.decoder_hidden, rng);
    weight_out_ = make_dense("dec.weight_out", cfg_.decoder_hidden, cfg_.n_components, rng, 0.1);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const InputDims& dims() const noexcept { return dims_; }
  const std::vector<double>& rate_scale() const noexcept { return rate_scale_; }
  std::size_t context1_width() const { return 2 * cfg_.conv_filters + 2 * cfg_.static_width + cfg_.future_width; }
  std::size_t context2_width() const { return cfg_.conv_filters + cfg_.static_width; }

  const std::vector<std::pair<std::string, ag::Tensor>>& parameters() const noexcept { return params_; }
  std::vector<ag::Tensor> parameter_tensors() const {
    std::vector<ag::Tensor> out;
    for (const auto& p : params_) out.push_back(p.second);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.second.numel();
    return n;
  }

  // ------------------------------------------------------------------ encoder

  /// Bottom conv stack over the full history: [N_b, N_cf, T].
  ag::Tensor bottom_activations(const FeatureBundle& fb) const {
    check_bundle(fb);
    auto x = ag::Tensor::constant({fb.n_bottom, fb.hist_bottom_channels, fb.history}, fb.hist_bottom);
    return conv_stack(conv_bottom_, x);
  }

  /// Shared conv stack over the full history: [1, N_cf, T].
  ag::Tensor shared_activations(const FeatureBundle& fb) const {
    check_bundle(fb);
    auto x = ag::Tensor::constant({1, fb.hist_shared_channels, fb.history}, fb.hist_shared);
    return conv_stack(conv_shared_, x);
  }

  /// Contexts h1 = [h1h | h2h | h1s | h2s | hf] and h2 = [h2h | h2s] at each creation index.
  Contexts encode(const FeatureBundle& fb, const std::vector<std::size_t>& creation) const {
    check_bundle(fb);
    if (creation.empty()) throw std::invalid_argument("encode: no creation indices");
    for (auto t : creation)
      if (t >= fb.history) throw std::out_of_range("encode: creation index " + std::to_string(t) + " outside history");
    const std::size_t nd = creation.size(), nb = fb.n_bottom, ncf = cfg_.conv_filters, ns = cfg_.static_width;

    auto hb = ag::permute(ag::index_select(bottom_activations(fb), 2, creation), {2, 0, 1});  // [D, N_b, N_cf]
    auto hs = ag::reshape(ag::permute(ag::index_select(shared_activations(fb), 2, creation), {2, 0, 1}), {nd, ncf});
    auto hs_b = ag::expand(hs, 1, nb);  // [D, N_b, N_cf]

    auto sb_in = ag::concat({ag::Tensor::constant({nb, fb.static_bottom.cols()}, fb.static_bottom.data()), embedding_}, 1);
    auto s1 = ag::expand(act(dense(static_bottom_, sb_in)), 0, nd);  // [D, N_b, N_s]
    auto s2 = ag::reshape(act(dense(static_shared_, ag::Tensor::constant({1, fb.static_shared.size()}, fb.static_shared))), {ns});
    auto s2_d = ag::expand(s2, 0, nd);
    auto s2_db = ag::expand(s2_d, 1, nb);

    auto hf = ag::reshape(act(dense(future_, future_window(fb, creation))), {nd, nb, cfg_.future_width});

    return {ag::concat({hb, hs_b, s1, s2_db, hf}, 2), ag::concat({hs, s2_d}, 1)};
  }

  // ------------------------------------------------------------------ decoder

  /// Horizon-forked rate head. Rows r = (d, b); returns softplus output [R, h, K]
  /// before rate scaling. Parameters are shared across tau.
  ag::Tensor decode_rates(const ag::Tensor& c_ag1, const ag::Tensor& c_sp, const ag::Tensor& fut) const {
    const std::size_t r = c_ag1.dim(0), hz = c_sp.dim(1);
    auto cag = ag::reshape(ag::expand(c_ag1, 1, hz), {r * hz, cfg_.context_agnostic});
    auto csp = ag::reshape(c_sp, {r * hz, cfg_.context_specific});
    auto f = ag::reshape(fut, {r * hz, fut.dim(2)});
    auto z = dense(rate_out_, act(dense(rate_hidden_, ag::concat({cag, csp, f}, 1))));
    return ag::reshape(ag::softplus(z), {r, hz, cfg_.n_components});
  }

  /// Mixture weights from the aggregate context: [D, K] on the simplex.
  ag::Tensor decode_weights(const ag::Tensor& c_ag2) const {
    return ag::softmax(dense(weight_out_, act(dense(weight_hidden_, c_ag2))), 1);
  }

  ForkedOutput decode(const Contexts& ctx, const FeatureBundle& fb, const std::vector<std::size_t>& creation) const {
    const std::size_t nd = creation.size(), nb = fb.n_bottom, hz = fb.horizon, nk = cfg_.n_components;
    auto h1 = ag::reshape(ctx.h1, {nd * nb, context1_width()});
    auto c_ag1 = act(dense(ctx_ag1_, h1));
    auto c_ag2 = act(dense(ctx_ag2_, ctx.h2));
    auto c_sp = ag::reshape(act(dense(ctx_sp_, h1)), {nd * nb, hz, cfg_.context_specific});
    auto raw = decode_rates(c_ag1, c_sp, step_features(fb, creation));  // [D*N_b, h, K]
    auto rates = ag::permute(ag::reshape(raw, {nd, nb, hz, nk}), {0, 1, 3, 2});
    std::vector<double> scale(nd * nb * nk * hz);
    for (std::size_t d = 0; d < nd; ++d)
      for (std::size_t b = 0; b < nb; ++b)
        std::fill_n(scale.begin() + (d * nb + b) * nk * hz, nk * hz, rate_scale_[b]);
    rates = ag::mul(rates, ag::Tensor::constant({nd, nb, nk, hz}, std::move(scale)));
    return {rates, decode_weights(c_ag2), creation};
  }

  /// One encoder pass over the sequence, decoders forked at every creation index.
  ForkedOutput forward_forked(const FeatureBundle& fb, const std::vector<std::size_t>& creation) const {
    return decode(encode(fb, creation), fb, creation);
  }

  /// Forecast issued at the last history step.
  PoissonMixtureForecast predict(const FeatureBundle& fb) const { return forward_forked(fb, {fb.history - 1}).forecast(0); }

  // ------------------------------------------------------------------ state

  std::vector<ag::NamedTensor> state() const {
    std::vector<ag::NamedTensor> out;
    for (const auto& [name, t] : params_) out.push_back({name, t.shape(), t.values()});
    out.push_back({"data.rate_scale", {rate_scale_.size()}, rate_scale_});
    return out;
  }

  void load_state(const std::vector<ag::NamedTensor>& entries) {
    std::size_t matched = 0;
    for (const auto& e : entries) {
      if (e.name == "data.rate_scale") {
        if (e.values.size() != rate_scale_.size()) throw InputError("checkpoint: rate scale length mismatch");
        rate_scale_ = e.values;
        continue;
      }
      if (e.name.starts_with("data.")) continue;  // other data-side state belongs to the caller
      auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.first == e.name; });
      if (it == params_.end()) throw InputError("checkpoint: unexpected tensor '" + e.name + "'");
      if (it->second.shape() != e.shape) {
        throw InputError("checkpoint: tensor '" + e.name + "' has shape " + ag::to_string(e.shape) + ", model expects " +
                         ag::to_string(it->second.shape()));
      }
      it->second.mutable_values() = e.values;
      ++matched;
    }
    if (matched != params_.size()) throw InputError("checkpoint: missing model tensors");
  }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    for (const auto& p : params_) out.push_back(p.second.values());
    return out;
  }
  void restore(const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].second.mutable_values() = snap.at(i);
  }

 private:
  ag::Tensor add_param(std::string name, ag::Shape shape, std::vector<double> values) {
    auto t = ag::Tensor::parameter(std::move(shape), std::move(values));
    params_.emplace_back(std::move(name), t);
    return t;
  }

  static std::vector<double> glorot(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out, std::size_t n,
                                    double gain = 1.0) {
    const double a = gain * std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in + fan_out, 1)));
    std::uniform_real_distribution<double> u(-a, a);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
  }

  Dense make_dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng, double gain = 1.0) {
    Dense d;
    d.w = add_param(name + ".weight", {in, out}, glorot(rng, in, out, in * out, gain));
    d.b = add_param(name + ".bias", {out}, std::vector<double>(out, 0.0));
    return d;
  }

  Conv make_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t dilation, std::mt19937_64& rng) {
    Conv c;
    const std::size_t kw = cfg_.kernel_width;
    c.k = add_param(name + ".kernel", {out, in, kw}, glorot(rng, in * kw, out * kw, out * in * kw));
    c.b = add_param(name + ".bias", {out}, std::vector<double>(out, 0.0));
    c.dilation = dilation;
    return c;
  }

  ag::Tensor act(const ag::Tensor& x) const {
    switch (cfg_.activation) {
      case Activation::relu: return ag::relu(x);
      case Activation::softplus: return ag::softplus(x);
      case Activation::tanh: return ag::tanh(x);
    }
    return x;
  }

  static ag::Tensor dense(const Dense& d, const ag::Tensor& x) { return ag::affine(x, d.w, d.b); }

  ag::Tensor conv_stack(const std::vector<Conv>& stack, ag::Tensor x) const {
    for (const auto& c : stack) x = act(ag::dilated_conv1d(x, c.k, c.dilation, c.b));
    return x;
  }

  void check_bundle(const FeatureBundle& fb) const {
    fb.validate();
    if (!(InputDims::of(fb) == dims_)) throw std::invalid_argument("model: feature bundle dimensions differ from the model's");
  }

  /// [D*N_b, h*(F_f + F~_f)]: future-known channels over t+1 .. t+h.
  static ag::Tensor future_window(const FeatureBundle& fb, const std::vector<std::size_t>& creation) {
    const std::size_t nb = fb.n_bottom, hz = fb.horizon, ff = fb.fut_bottom_channels, fs = fb.fut_shared_channels;
    const std::size_t width = hz * (ff + fs);
    std::vector<double> v(creation.size() * nb * width);
    std::size_t i = 0;
    for (auto t : creation)
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t c = 0; c < ff; ++c)
          for (std::size_t s = 1; s <= hz; ++s) v[i++] = fb.fut_b(b, c, t + s);
        for (std::size_t c = 0; c < fs; ++c)
          for (std::size_t s = 1; s <= hz; ++s) v[i++] = fb.fut_s(c, t + s);
      }
    return ag::Tensor::constant({creation.size() * nb, width}, std::move(v));
  }

  /// [D*N_b, h, F_f + F~_f]: per-step future inputs of the rate head.
  static ag::Tensor step_features(const FeatureBundle& fb, const std::vector<std::size_t>& creation) {
    const std::size_t nb = fb.n_bottom, hz = fb.horizon, ff = fb.fut_bottom_channels, fs = fb.fut_shared_channels;
    std::vector<double> v(creation.size() * nb * hz * (ff + fs));
    std::size_t i = 0;
    for (auto t : creation)
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t s = 1; s <= hz; ++s) {
          for (std::size_t c = 0; c < ff; ++c) v[i++] = fb.fut_b(b, c, t + s);
          for (std::size_t c = 0; c < fs; ++c) v[i++] = fb.fut_s(c, t + s);
        }
    return ag::Tensor::constant({creation.size() * nb, hz, ff + fs}, std::move(v));
  }

  ModelConfig cfg_;
  InputDims dims_;
  std::vector<double> rate_scale_;
  std::vector<std::pair<std::string, ag::Tensor>> params_;
  std::vector<Conv> conv_bottom_, conv_shared_;
  ag::Tensor embedding_;
  Dense static_bottom_, static_shared_, future_;
  Dense ctx_ag1_, ctx_ag2_, ctx_sp_;
  Dense rate_hidden_, rate_out_, weight_hidden_, weight_out_;
};

}  // namespace dpmn
