#include "stairpool/stair_pooling.hpp"

#include <algorithm>
#include <numeric>

#include "stairpool/error.hpp"

namespace stairpool {

std::string PathSpec::label() const {
  std::string out;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    if (k) out += '>';
    out += 'P';
    for (int e : steps[k]) out += std::to_string(e);
  }
  return out;
}

Extents PathSpec::total_stride() const {
  Extents total(static_cast<std::size_t>(ndim), 1);
  for (const auto& step : steps) {
    for (int a = 0; a < ndim && a < static_cast<int>(step.size()); ++a) total[a] *= step[a];
  }
  return total;
}

PathSpec PathSpec::parse(std::string_view label) {
  auto fail = [&] { return Error(Errc::UnknownPathLabel, "malformed path label '" + std::string(label) + "'"); };
  PathSpec spec;
  spec.ndim = 0;
  std::size_t pos = 0;
  while (pos <= label.size()) {
    const std::size_t end = std::min(label.find('>', pos), label.size());
    std::string_view tok = label.substr(pos, end - pos);
    if (tok.size() < 3 || tok[0] != 'P') throw fail();
    Extents step;
    for (char c : tok.substr(1)) {
      if (c < '1' || c > '9') throw fail();
      step.push_back(c - '0');
    }
    if (spec.ndim == 0) spec.ndim = static_cast<int>(step.size());
    if (static_cast<int>(step.size()) != spec.ndim || spec.ndim > 3) throw fail();
    spec.steps.push_back(std::move(step));
    pos = end + 1;
  }
  if (spec.steps.empty()) throw fail();
  return spec;
}

std::vector<PathSpec> enumerate_paths(int ndim, const Extents& target_stride) {
  if (ndim != 2 && ndim != 3) {
    throw Error(Errc::UnsupportedNdim, "stair pooling supports 2 or 3 spatial axes, got " + std::to_string(ndim));
  }
  if (static_cast<int>(target_stride.size()) != ndim) {
    throw Error(Errc::ShapeMismatch, "target stride has wrong number of axes");
  }
  std::vector<int> axes;
  for (int a = 0; a < ndim; ++a) {
    if (target_stride[a] > 1) axes.push_back(a);
  }
  std::vector<PathSpec> out;
  if (axes.size() < 2) return out;  // nothing to decompose
  do {
    PathSpec p;
    p.ndim = ndim;
    for (int a : axes) {
      Extents k(static_cast<std::size_t>(ndim), 1);
      k[a] = target_stride[a];
      p.steps.push_back(std::move(k));
    }
    out.push_back(std::move(p));
  } while (std::next_permutation(axes.begin(), axes.end()));
  return out;
}

std::vector<PathSpec> enumerate_paths(int ndim) { return enumerate_paths(ndim, Extents(std::max(ndim, 0), 2)); }

void validate_path(const PathSpec& path, const Extents& target_stride) {
  if (path.ndim != 2 && path.ndim != 3) {
    throw Error(Errc::UnsupportedNdim, "path " + path.label() + " has ndim " + std::to_string(path.ndim));
  }
  if (static_cast<int>(target_stride.size()) != path.ndim) {
    throw Error(Errc::ShapeMismatch, "target stride has wrong number of axes for " + path.label());
  }
  if (path.steps.empty()) throw Error(Errc::NotNarrow, "path has no steps");
  for (std::size_t k = 0; k < path.steps.size(); ++k) {
    const Extents& step = path.steps[k];
    if (static_cast<int>(step.size()) != path.ndim) {
      throw Error(Errc::ShapeMismatch, "step " + std::to_string(k) + " has wrong number of axes");
    }
    const bool has_unit = std::count(step.begin(), step.end(), 1) > 0;
    const bool has_reduce = std::any_of(step.begin(), step.end(), [](int e) { return e > 1; });
    const bool positive = std::all_of(step.begin(), step.end(), [](int e) { return e >= 1; });
    if (!has_unit || !has_reduce || !positive) {
      throw Error(Errc::NotNarrow, "step " + std::to_string(k) + " of " + path.label() + " is not a narrow kernel");
    }
  }
  const Extents got = path.total_stride();
  for (int a = 0; a < path.ndim; ++a) {
    if (got[a] != target_stride[a]) {
      throw Error(Errc::ProductMismatch, "axis " + std::to_string(a) + ": got " + std::to_string(got[a]) +
                                             ", want " + std::to_string(target_stride[a]) + " for " + path.label());
    }
  }
}

StairPoolBlock::StairPoolBlock(std::string name, int ndim, std::int64_t channels, std::vector<PathSpec> paths,
                               std::mt19937_64& rng, Options options)
    : name_(std::move(name)), ndim_(ndim), channels_(channels), paths_(std::move(paths)) {
  if (ndim != 2 && ndim != 3) {
    throw Error(Errc::UnsupportedNdim, "stair block supports 2 or 3 spatial axes, got " + std::to_string(ndim));
  }
  if (paths_.empty()) throw Error(Errc::NoActivePaths, "stair block " + name_ + " needs at least one path");
  if (channels < 1) throw Error(Errc::InvalidConfig, "stair block needs at least one channel");
  stride_ = options.allow_nonstandard ? paths_.front().total_stride() : Extents(ndim, 2);
  for (const auto& p : paths_) {
    if (p.ndim != ndim) throw Error(Errc::UnsupportedNdim, "path " + p.label() + " does not match block ndim");
    validate_path(p, stride_);
  }

  const std::int64_t C = channels_;
  const std::int64_t center = ndim == 2 ? 4 : 13;  // flat index of the 3x3(x3) center tap
  const std::int64_t taps = ndim == 2 ? 9 : 27;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& p : paths_) {
    std::vector<ConvLayer> convs;
    for (std::size_t k = 0; k < p.steps.size(); ++k) {
      const std::string prefix = name_ + ".path[" + p.label() + "].conv" + std::to_string(k);
      Tensor w(conv_weight_shape(ndim, C, C, 3));
      for (auto& v : w.data()) v = options.init_noise * normal(rng);
      for (std::int64_t o = 0; o < C; ++o) w[(o * C + o) * taps + center] = 1.0;
      convs.push_back(ConvLayer{Parameter(prefix + ".w", std::move(w)), Parameter(prefix + ".b", Tensor({C}, 0.0)),
                                Extents(ndim, 1)});
    }
    path_convs_.push_back(std::move(convs));
  }
  const auto n = static_cast<std::int64_t>(paths_.size());
  Tensor fw(conv_weight_shape(ndim, C, n * C, 1));
  for (auto& v : fw.data()) v = options.init_noise * normal(rng);
  for (std::int64_t o = 0; o < C; ++o) {
    for (std::int64_t p = 0; p < n; ++p) fw[o * n * C + p * C + o] += 1.0 / static_cast<double>(n);
  }
  fusion_ = ConvLayer{Parameter(name_ + ".fuse.w", std::move(fw)), Parameter(name_ + ".fuse.b", Tensor({C}, 0.0)),
                      Extents(ndim, 0)};
  active_.assign(paths_.size(), true);
}

std::size_t StairPoolBlock::path_index(std::string_view label) const {
  for (std::size_t i = 0; i < paths_.size(); ++i) {
    if (paths_[i].label() == label) return i;
  }
  throw Error(Errc::UnknownPathLabel, "block " + name_ + " has no path '" + std::string(label) + "'");
}

void StairPoolBlock::set_active_paths(std::vector<bool> mask) {
  if (mask.size() != paths_.size()) throw Error(Errc::BadPathIndex, "active mask size does not match path count");
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw Error(Errc::NoActivePaths, "block " + name_ + " must keep at least one active path");
  }
  active_ = std::move(mask);
}

Var StairPoolBlock::path_forward(Tape& tape, Var x, std::size_t path) const {
  if (path >= paths_.size()) throw Error(Errc::BadPathIndex, "path " + std::to_string(path) + " out of range");
  const Tensor& xv = tape.value(x);
  if (xv.rank() < 2 || xv.dim(1) != channels_) {
    throw Error(Errc::ChannelMismatch, "block " + name_ + " expects " + std::to_string(channels_) + " channels, got " +
                                           shape_str(xv.shape()));
  }
  Var v = x;
  const PathSpec& spec = paths_[path];
  for (std::size_t k = 0; k < spec.steps.size(); ++k) {
    v = max_pool(tape, v, spec.steps[k], spec.steps[k]);
    v = relu(tape, path_convs_[path][k](tape, v));
  }
  return v;
}

Var StairPoolBlock::forward_subset(Tape& tape, Var x, const std::vector<std::size_t>& paths,
                                   std::vector<Var>* path_outputs) const {
  if (paths.empty()) throw Error(Errc::NoActivePaths, "block " + name_ + " evaluated with no paths");
  std::vector<Var> ys;
  for (std::size_t i : paths) ys.push_back(path_forward(tape, x, i));
  if (path_outputs) path_outputs->insert(path_outputs->end(), ys.begin(), ys.end());

  Var fused_in = ys.size() == 1 ? ys.front() : concat(tape, ys);
  Var w = tape.watch(fusion_.weight);
  std::vector<std::size_t> all(paths_.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (paths != all) {
    std::vector<Var> slices;
    for (std::size_t i : paths) {
      slices.push_back(slice_channels(tape, w, static_cast<std::int64_t>(i) * channels_, channels_));
    }
    w = slices.size() == 1 ? slices.front() : concat(tape, slices);
  }
  return conv(tape, fused_in, w, tape.watch(fusion_.bias), fusion_.padding);
}

Var StairPoolBlock::forward(Tape& tape, Var x, std::vector<Var>* path_outputs) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < active_.size(); ++i) {
    if (active_[i]) idx.push_back(i);
  }
  return forward_subset(tape, x, idx, path_outputs);
}

StairPoolBlock StairPoolBlock::select(std::size_t path) const {
  if (path >= paths_.size()) throw Error(Errc::BadPathIndex, "path " + std::to_string(path) + " out of range");
  StairPoolBlock out;
  out.name_ = name_;
  out.ndim_ = ndim_;
  out.channels_ = channels_;
  out.stride_ = stride_;
  out.paths_ = {paths_[path]};
  out.path_convs_ = {path_convs_[path]};
  const std::int64_t C = channels_;
  const std::int64_t n = static_cast<std::int64_t>(paths_.size());
  Tensor w(conv_weight_shape(ndim_, C, C, 1));
  for (std::int64_t o = 0; o < C; ++o) {
    for (std::int64_t i = 0; i < C; ++i) w[o * C + i] = fusion_.weight.value[o * n * C + static_cast<std::int64_t>(path) * C + i];
  }
  out.fusion_ = ConvLayer{Parameter(fusion_.weight.name, std::move(w)),
                          Parameter(fusion_.bias.name, Tensor(fusion_.bias.value.shape(), fusion_.bias.value.storage())),
                          fusion_.padding};
  out.active_ = {true};
  return out;
}

std::vector<Parameter*> StairPoolBlock::parameters() {
  std::vector<Parameter*> out;
  for (auto& convs : path_convs_) {
    for (auto& c : convs) {
      out.push_back(&c.weight);
      out.push_back(&c.bias);
    }
  }
  out.push_back(&fusion_.weight);
  out.push_back(&fusion_.bias);
  return out;
}

std::vector<const Parameter*> StairPoolBlock::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<StairPoolBlock*>(this)->parameters()) out.push_back(p);
  return out;
}

std::int64_t StairPoolBlock::param_count() const {
  std::int64_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

}  // namespace stairpool
