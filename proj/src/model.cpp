#include "xpr/model.hpp"

#include <cmath>

namespace xpr {

namespace {

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void fill_normal(std::vector<double>& out, std::size_t n, double stddev, Rng& rng) {
  out.resize(n);
  for (double& v : out) v = f32(stddev * rng.normal());
}

}  // namespace

ModelParams init_model(const Config& cfg) {
  const int ch = feature_channels(cfg);
  const int ns = cfg.n_classes;
  const int kc = cfg.netvlad_clusters;
  const Rng root = Rng(cfg.seed).split(0x4d4f44454cULL);

  ModelParams m;
  m.enc = EncoderParams::zeros(kQueryInputChannels, ch, ns);
  {
    Rng rng = root.split(1);
    fill_normal(m.enc.rgb_proj, m.enc.rgb_proj.size(), 1.0 / std::sqrt(kQueryInputChannels), rng);
    fill_normal(m.enc.seg_head, m.enc.seg_head.size(), 0.1, rng);
    // Identity, except the horizontal normal outputs start switched off: over a
    // 360° map render they average out, over a 90° query they do not.
    for (int c = 3; c < ch; ++c) m.enc.desc_proj[c * ch + c] = 1.0;
    m.enc.desc_proj[0] = 1.0;
  }

  m.att.channels = ch;
  m.att.n_classes = ns;
  m.att.gain = 1.0;
  {
    Rng rng = root.split(2);
    fill_normal(m.att.bilinear, static_cast<std::size_t>(ch) * ns, 0.1, rng);
  }

  m.vlad.clusters = kc;
  m.vlad.channels = ch;
  m.vlad.out_dim = cfg.descriptor_dim;
  {
    Rng rng = root.split(3);
    // Each cluster starts on the one-hot direction of class k mod N_S, slightly
    // short of it and at a mid-range depth, with a sharp class-keyed assignment.
    constexpr double kSharpness = 10.0;
    constexpr double kShrink = 0.05;
    constexpr double kDepth = 0.2;
    fill_normal(m.vlad.centroids, static_cast<std::size_t>(kc) * ch, 0.02, rng);
    fill_normal(m.vlad.assign_w, static_cast<std::size_t>(kc) * ch, 0.02, rng);
    m.vlad.assign_b.assign(static_cast<std::size_t>(kc), 0.0);
    for (int k = 0; k < kc; ++k) {
      const int cls = 4 + k % ns;
      m.vlad.centroids[k * ch] = f32(m.vlad.centroids[k * ch] + kDepth);
      m.vlad.centroids[k * ch + cls] = f32(m.vlad.centroids[k * ch + cls] + 1.0 - kShrink);
      m.vlad.assign_w[k * ch + cls] = f32(m.vlad.assign_w[k * ch + cls] + kSharpness);
    }
    Rng proj = root.split(4);
    fill_normal(m.vlad.projection, static_cast<std::size_t>(cfg.descriptor_dim) * kc * ch,
                1.0 / std::sqrt(static_cast<double>(cfg.descriptor_dim)), proj);
  }
  return m;
}

ModelParams zero_grads(const ModelParams& like) {
  ModelParams g = like;
  for_each_trainable(g, [](std::string_view, std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
  return g;
}

void for_each_trainable(ModelParams& p, const std::function<void(std::string_view, std::span<double>)>& fn) {
  fn("enc.rgb_proj", p.enc.rgb_proj);
  fn("enc.rgb_bias", p.enc.rgb_bias);
  fn("enc.seg_head", p.enc.seg_head);
  fn("enc.seg_bias", p.enc.seg_bias);
  fn("enc.desc_proj", p.enc.desc_proj);
  fn("att.bilinear", p.att.bilinear);
  fn("att.gain", std::span<double>(&p.att.gain, 1));
  fn("vlad.centroids", p.vlad.centroids);
  fn("vlad.assign_w", p.vlad.assign_w);
  fn("vlad.assign_b", p.vlad.assign_b);
}

void for_each_trainable(const ModelParams& p,
                        const std::function<void(std::string_view, std::span<const double>)>& fn) {
  for_each_trainable(const_cast<ModelParams&>(p),
                     [&fn](std::string_view name, std::span<double> t) { fn(name, std::span<const double>(t)); });
}

void axpy(ModelParams& params, double scale, const ModelParams& delta) {
  std::vector<std::span<const double>> src;
  for_each_trainable(delta, [&src](std::string_view, std::span<const double> t) { src.push_back(t); });
  std::size_t i = 0;
  for_each_trainable(params, [&](std::string_view, std::span<double> t) {
    const auto s = src[i++];
    for (std::size_t j = 0; j < t.size(); ++j) t[j] += scale * s[j];
  });
}

std::size_t trainable_size(const ModelParams& params) {
  std::size_t n = 0;
  for_each_trainable(params, [&n](std::string_view, std::span<const double> t) { n += t.size(); });
  return n;
}

void round_to_float(ModelParams& params) {
  for_each_trainable(params, [](std::string_view, std::span<double> t) {
    for (double& v : t) v = f32(v);
  });
}

void check_model_shapes(const ModelParams& p, const Config& cfg) {
  const int ch = feature_channels(cfg);
  const int ns = cfg.n_classes;
  const auto size_is = [](const std::vector<double>& v, long n) { return static_cast<long>(v.size()) == n; };
  if (p.enc.in_channels != kQueryInputChannels || p.enc.channels != ch || p.enc.n_classes != ns ||
      !size_is(p.enc.rgb_proj, kQueryInputChannels * ch) || !size_is(p.enc.rgb_bias, ch) ||
      !size_is(p.enc.seg_head, ch * ns) || !size_is(p.enc.seg_bias, ns) || !size_is(p.enc.desc_proj, ch * ch)) {
    throw ConfigError("n_classes", "encoder parameter shapes do not match the configuration");
  }
  if (p.att.channels != ch || p.att.n_classes != ns || !size_is(p.att.bilinear, ch * ns)) {
    throw ConfigError("n_classes", "attention parameter shapes do not match the configuration");
  }
  const int kc = cfg.netvlad_clusters;
  if (p.vlad.clusters != kc || p.vlad.channels != ch || p.vlad.out_dim != cfg.descriptor_dim ||
      !size_is(p.vlad.centroids, kc * ch) || !size_is(p.vlad.assign_w, kc * ch) || !size_is(p.vlad.assign_b, kc) ||
      !size_is(p.vlad.projection, static_cast<long>(cfg.descriptor_dim) * kc * ch)) {
    throw ConfigError("netvlad_clusters/descriptor_dim", "NetVLAD parameter shapes do not match the configuration");
  }
}

}  // namespace xpr
