#include "stairpool/unet.hpp"

#include "stairpool/error.hpp"

namespace stairpool {

std::string PoolingChoice::to_string() const {
  switch (kind) {
    case PoolingKind::Plain: return "plain";
    case PoolingKind::StairFull: return "stair_full";
    case PoolingKind::StairSelected: return "stair_selected:" + label;
  }
  return "plain";
}

PoolingChoice PoolingChoice::parse(std::string_view text) {
  if (text == "plain") return plain();
  if (text == "stair_full") return stair_full();
  constexpr std::string_view prefix = "stair_selected:";
  if (text.substr(0, prefix.size()) == prefix) {
    std::string label(text.substr(prefix.size()));
    PathSpec::parse(label);
    return stair_selected(std::move(label));
  }
  throw Error(Errc::InvalidConfig, "unknown pooling choice '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    return Error(Errc::InvalidConfig, field + ": " + why);
  };
  if (ndim != 2 && ndim != 3) throw bad("model.ndim", "must be 2 or 3");
  if (in_channels < 1) throw bad("model.in_channels", "must be >= 1");
  if (num_classes < 2) throw bad("model.num_classes", "must be >= 2");
  if (base_channels < 1) throw bad("model.base_channels", "must be >= 1");
  if (depth != kUNetDepth) throw bad("model.depth", "must be 3");
  if (base_channels * 8 > max_channels) {
    throw bad("model.base_channels", "8 * base_channels exceeds model.max_channels = " + std::to_string(max_channels));
  }
  if (stair_init_noise < 0) throw bad("model.stair_init_noise", "must be >= 0");
  for (int l = 0; l < kUNetDepth; ++l) {
    const auto& p = pooling[l];
    if (p.kind != PoolingKind::StairSelected) continue;
    const std::string field = "model.pooling.step" + std::to_string(l + 1);
    PathSpec spec;
    try {
      spec = PathSpec::parse(p.label);
    } catch (const Error& e) {
      throw bad(field, e.what());
    }
    if (spec.ndim != ndim) throw bad(field, "path " + p.label + " does not match ndim");
    try {
      validate_path(spec, Extents(ndim, 2));
    } catch (const Error& e) {
      throw bad(field, e.what());
    }
  }
}

UNet build_unet(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  UNet m;
  m.cfg_ = cfg;
  const int nd = cfg.ndim;
  const std::int64_t b = cfg.base_channels;
  const std::array<std::int64_t, kUNetDepth> ch{b, 2 * b, 4 * b};
  std::mt19937_64 rng(seed);

  std::int64_t in = cfg.in_channels;
  for (int l = 0; l < kUNetDepth; ++l) {
    const std::string name = "enc" + std::to_string(l + 1);
    m.enc_[l].conv1 = make_conv(name + ".conv1", nd, in, ch[l], 3, rng);
    m.enc_[l].conv2 = make_conv(name + ".conv2", nd, ch[l], ch[l], 3, rng);
    in = ch[l];
  }
  m.bottleneck1_ = make_conv("bottleneck.conv1", nd, ch[2], 8 * b, 3, rng);
  m.bottleneck2_ = make_conv("bottleneck.conv2", nd, 8 * b, 8 * b, 3, rng);
  for (int l = kUNetDepth - 1; l >= 0; --l) {
    const std::string name = "dec" + std::to_string(l + 1);
    m.dec_[l].up = make_upconv(name + ".up", nd, 2 * ch[l], ch[l], rng);
    m.dec_[l].conv1 = make_conv(name + ".conv1", nd, 2 * ch[l], ch[l], 3, rng);
    m.dec_[l].conv2 = make_conv(name + ".conv2", nd, ch[l], ch[l], 3, rng);
  }
  m.head_ = make_conv("head", nd, b, cfg.num_classes, 1, rng);

  StairPoolBlock::Options opts;
  opts.init_noise = cfg.stair_init_noise;
  for (int l = 0; l < kUNetDepth; ++l) {
    const auto& p = cfg.pooling[l];
    if (p.kind == PoolingKind::Plain) continue;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(0x57A1u + l)};
    std::mt19937_64 stair_rng(seq);
    std::vector<PathSpec> paths =
        p.kind == PoolingKind::StairFull ? enumerate_paths(nd) : std::vector<PathSpec>{PathSpec::parse(p.label)};
    m.enc_[l].stair.emplace("enc" + std::to_string(l + 1) + ".pool", nd, ch[l], std::move(paths), stair_rng, opts);
  }
  return m;
}

bool UNet::is_stair_step(int step) const {
  if (step < 1 || step > kUNetDepth) throw Error(Errc::NotStairStep, "step must be in 1..3");
  return enc_[step - 1].stair.has_value();
}

const StairPoolBlock& UNet::stair_block(int step) const {
  if (!is_stair_step(step)) throw Error(Errc::NotStairStep, "step " + std::to_string(step) + " uses plain pooling");
  return *enc_[step - 1].stair;
}

TraceVars UNet::forward(Tape& tape, Var x, const PathOverrides& overrides) const {
  const Tensor& xv = tape.value(x);
  const Geometry g = Geometry::of(xv.shape());
  if (g.spatial_dims != cfg_.ndim) {
    throw Error(Errc::ShapeMismatch, "input " + shape_str(xv.shape()) + " does not match model ndim");
  }
  if (g.c != cfg_.in_channels) {
    throw Error(Errc::ChannelMismatch, "model expects " + std::to_string(cfg_.in_channels) + " input channels");
  }
  const std::int64_t div = std::int64_t{1} << kUNetDepth;
  if (g.h % div || g.w % div || (cfg_.ndim == 3 && g.d % div)) {
    throw Error(Errc::NonDivisibleShape, "spatial extents of " + shape_str(xv.shape()) + " must be divisible by 8");
  }
  for (int l = 0; l < kUNetDepth; ++l) {
    if (!overrides[l]) continue;
    if (!enc_[l].stair) throw Error(Errc::NotStairStep, "step " + std::to_string(l + 1) + " uses plain pooling");
    if (*overrides[l] >= enc_[l].stair->num_paths()) {
      throw Error(Errc::BadPathIndex, "step " + std::to_string(l + 1) + " has no path " + std::to_string(*overrides[l]));
    }
  }

  TraceVars tv;
  std::array<Var, kUNetDepth> skips{};
  Var v = x;
  for (int l = 0; l < kUNetDepth; ++l) {
    const auto& st = enc_[l];
    v = relu(tape, st.conv1(tape, v));
    v = relu(tape, st.conv2(tape, v));
    skips[l] = v;
    if (!st.stair) {
      v = max_pool(tape, v, Extents(cfg_.ndim, 2), Extents(cfg_.ndim, 2));
    } else if (overrides[l]) {
      v = st.stair->forward_subset(tape, v, {*overrides[l]}, &tv.y[l]);
    } else {
      v = st.stair->forward(tape, v, &tv.y[l]);
    }
    tv.z[l] = v;
  }
  v = relu(tape, bottleneck1_(tape, v));
  v = relu(tape, bottleneck2_(tape, v));
  for (int l = kUNetDepth - 1; l >= 0; --l) {
    const auto& st = dec_[l];
    Var up = st.up(tape, v);
    std::vector<Var> parts{skips[l], up};
    v = concat(tape, parts);
    v = relu(tape, st.conv1(tape, v));
    v = relu(tape, st.conv2(tape, v));
  }
  tv.x_o = v;
  tv.logits = head_(tape, v);
  return tv;
}

std::vector<Parameter*> UNet::parameters() {
  std::vector<Parameter*> out;
  auto conv = [&](auto& c) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  };
  for (auto& st : enc_) {
    conv(st.conv1);
    conv(st.conv2);
    if (st.stair) {
      for (auto* p : st.stair->parameters()) out.push_back(p);
    }
  }
  conv(bottleneck1_);
  conv(bottleneck2_);
  for (int l = kUNetDepth - 1; l >= 0; --l) {
    conv(dec_[l].up);
    conv(dec_[l].conv1);
    conv(dec_[l].conv2);
  }
  conv(head_);
  return out;
}

std::vector<const Parameter*> UNet::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<UNet*>(this)->parameters()) out.push_back(p);
  return out;
}

Parameter* UNet::find_parameter(std::string_view name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

const Parameter* UNet::find_parameter(std::string_view name) const {
  return const_cast<UNet*>(this)->find_parameter(name);
}

std::int64_t UNet::param_count() const {
  std::int64_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

std::int64_t param_count(const UNet& model) { return model.param_count(); }

ForwardTrace forward_with_path_overrides(const UNet& model, const Tensor& x, const PathOverrides& overrides) {
  Tape tape(Tape::Mode::Inference);
  TraceVars tv = model.forward(tape, tape.constant(x), overrides);
  ForwardTrace tr;
  tr.recorded = true;
  for (int l = 0; l < kUNetDepth; ++l) {
    tr.z[l] = tape.value(tv.z[l]);
    for (Var y : tv.y[l]) tr.y[l].push_back(tape.value(y));
  }
  tr.x_o = tape.value(tv.x_o);
  tr.logits = tape.value(tv.logits);
  return tr;
}

ForwardTrace forward(const UNet& model, const Tensor& x, bool record) {
  if (record) return forward_with_path_overrides(model, x, {});
  Tape tape(Tape::Mode::Inference);
  ForwardTrace tr;
  tr.logits = tape.value(model.forward(tape, tape.constant(x)).logits);
  return tr;
}

ForwardTrace forward_with_path_override(const UNet& model, const Tensor& x, int step, std::size_t path) {
  if (step < 1 || step > kUNetDepth) throw Error(Errc::NotStairStep, "step must be in 1..3");
  PathOverrides o{};
  o[step - 1] = path;
  return forward_with_path_overrides(model, x, o);
}

UNet apply_path_selection(const UNet& model, const PathSelection& selection) {
  UNet out = model;
  for (int l = 0; l < kUNetDepth; ++l) {
    if (!selection[l]) continue;
    auto& st = out.enc_[l];
    if (!st.stair) throw Error(Errc::NotStairStep, "step " + std::to_string(l + 1) + " uses plain pooling");
    const std::size_t idx = st.stair->path_index(*selection[l]);
    st.stair = st.stair->select(idx);
    out.cfg_.pooling[l] = PoolingChoice::stair_selected(*selection[l]);
  }
  return out;
}

}  // namespace stairpool
