#include "careseg/net.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "careseg/errors.hpp"

namespace careseg {

namespace {

struct ConvSpec {
  std::string name;
  int in_ch, out_ch, ksize;
};

// canonical conv sequence of a stage
std::vector<ConvSpec> stage_layout(const StageConfig& c) {
  std::vector<ConvSpec> specs;
  const int F = c.base_filters;
  for (int i = 0; i < c.pre_convs; ++i)
    specs.push_back({"pre" + std::to_string(i), i == 0 ? c.in_channels : F, F, 3});
  for (int l = 0; l < c.levels; ++l) {
    specs.push_back({"enc" + std::to_string(l) + ".c0", F, F, 3});
    specs.push_back({"enc" + std::to_string(l) + ".c1", F, F, 3});
  }
  for (int l = c.levels - 2; l >= 0; --l) {
    specs.push_back({"dec" + std::to_string(l) + ".c0", 2 * F, F, 3});
    specs.push_back({"dec" + std::to_string(l) + ".c1", F, F, 3});
  }
  for (int i = 0; i < c.post_convs; ++i)
    specs.push_back({"post" + std::to_string(i), F, F, 3});
  specs.push_back({"head", F, c.out_channels, 1});
  return specs;
}

StageConfig stage_config_for(const CascadeConfig& c, int stage) {
  StageConfig s;
  s.levels = c.levels;
  s.base_filters = c.base_filters;
  s.dropout_rate = c.dropout_rate;
  s.relu_slope = c.relu_slope;
  switch (stage) {
    case 1: s.in_channels = 1; s.out_channels = 3; break;
    case 2: s.in_channels = 1 + 3; s.out_channels = 4; break;
    case 3: s.in_channels = 1 + 4; s.out_channels = 5; break;
  }
  return s;
}

}  // namespace

template <class T>
StageModel<T> build_stage(const StageConfig& cfg, Rng& rng) {
  StageModel<T> m;
  m.cfg = cfg;
  for (const auto& s : stage_layout(cfg)) {
    ConvParam<T> p;
    p.name = s.name;
    p.w = Tensor5<T>(s.out_ch, s.in_ch, s.ksize, s.ksize, s.ksize);
    he_init(p.w, int64_t(s.in_ch) * s.ksize * s.ksize * s.ksize, rng);
    p.b.assign(size_t(s.out_ch), T(0));
    m.convs.push_back(std::move(p));
  }
  return m;
}

template <class T>
CascadeModel<T> build_cascade(const CascadeConfig& cfg, Rng& rng) {
  CascadeModel<T> m;
  m.stage1 = build_stage<T>(stage_config_for(cfg, 1), rng);
  m.stage2 = build_stage<T>(stage_config_for(cfg, 2), rng);
  m.stage3 = build_stage<T>(stage_config_for(cfg, 3), rng);
  return m;
}

template <class T>
StageGrads<T> zero_grads(const StageModel<T>& m) {
  StageGrads<T> g;
  for (const auto& p : m.convs) {
    g.w.emplace_back(p.w.n, p.w.c, p.w.dx, p.w.dy, p.w.dz);
    g.b.emplace_back(p.b.size(), T(0));
  }
  return g;
}

template <class T>
void add_scaled(StageGrads<T>& dst, const StageGrads<T>& src, T scale) {
  for (size_t i = 0; i < dst.w.size(); ++i) {
    for (size_t j = 0; j < dst.w[i].data.size(); ++j) dst.w[i].data[j] += scale * src.w[i].data[j];
    for (size_t j = 0; j < dst.b[i].size(); ++j) dst.b[i][j] += scale * src.b[i][j];
  }
}

template <class T>
CascadeGrads<T> zero_grads(const CascadeModel<T>& m) {
  return {zero_grads(m.stage1), zero_grads(m.stage2), zero_grads(m.stage3)};
}

template <class T>
void add_scaled(CascadeGrads<T>& dst, const CascadeGrads<T>& src, T scale) {
  add_scaled(dst.s1, src.s1, scale);
  add_scaled(dst.s2, src.s2, scale);
  add_scaled(dst.s3, src.s3, scale);
}

// ---- forward --------------------------------------------------------------------

template <class T>
Tensor5<T> stage_forward(const StageModel<T>& m, const Tensor5<T>& input, bool training, Rng& rng,
                         StageTape<T>* tape) {
  const StageConfig& c = m.cfg;
  if (input.c != c.in_channels)
    throw ShapeMismatch("stage_forward: expected " + std::to_string(c.in_channels) +
                        " input channels, got " + std::to_string(input.c));
  const int64_t down = int64_t(1) << (c.levels - 1);
  if (input.dx % down || input.dy % down || input.dz % down)
    throw IndivisibleDims("stage_forward: spatial dims must be divisible by 2^(levels-1)");

  StageTape<T> local;
  StageTape<T>& tp = tape ? *tape : local;
  tp = StageTape<T>{};
  const bool record = tape != nullptr;
  tp.recorded = record;

  const T slope = T(c.relu_slope);
  const T rate = T(c.dropout_rate);
  size_t conv_idx = 0;

  Tensor5<T> cur = input;
  const auto conv_step = [&](bool activate) {
    const ConvParam<T>& p = m.convs[conv_idx];
    if (record) tp.conv_in.push_back(cur);
    Tensor5<T> out;
    conv3d_forward(cur, p.w, p.b, out);
    if (activate) leaky_relu_forward(out, slope);
    if (record) tp.act.push_back(out);
    cur = std::move(out);
    ++conv_idx;
  };
  const auto block = [&]() {  // conv - lrelu - dropout - conv - lrelu
    conv_step(true);
    std::vector<T> mask;
    dropout_forward(cur, rate, training, rng, mask);
    if (record) tp.dropout_masks.push_back(std::move(mask));
    conv_step(true);
  };

  for (int i = 0; i < c.pre_convs; ++i) conv_step(true);

  for (int l = 0; l < c.levels; ++l) {
    block();
    if (l < c.levels - 1) {
      tp.skips.push_back(cur);
      std::vector<int64_t> argmax;
      cur = maxpool3d_forward(cur, argmax);
      if (record) tp.pool_argmax.push_back(std::move(argmax));
    }
  }

  for (int l = c.levels - 2; l >= 0; --l) {
    cur = upsample2x_forward(cur);
    cur = concat_channels(tp.skips[size_t(l)], cur);
    block();
  }

  for (int i = 0; i < c.post_convs; ++i) conv_step(true);
  conv_step(false);  // 1x1x1 head, raw logits
  return cur;
}

// ---- backward -------------------------------------------------------------------

template <class T>
Tensor5<T> stage_backward(const StageModel<T>& m, const StageTape<T>& tape,
                          const Tensor5<T>& grad_logits, StageGrads<T>& grads) {
  if (!tape.recorded) throw NoRecordedForward("stage_backward without a recorded forward pass");
  const StageConfig& c = m.cfg;
  const T slope = T(c.relu_slope);

  size_t conv_idx = m.convs.size();
  size_t mask_idx = tape.dropout_masks.size();

  Tensor5<T> g = grad_logits;
  const auto conv_step_back = [&](bool activated) {
    --conv_idx;
    const ConvParam<T>& p = m.convs[conv_idx];
    // leaky relu preserves sign, so the post-activation values carry the
    // branch information needed for its derivative
    if (activated) leaky_relu_backward(tape.act[conv_idx], g, slope);
    Tensor5<T> grad_in;
    conv3d_backward(tape.conv_in[conv_idx], p.w, g, grad_in, grads.w[conv_idx], grads.b[conv_idx]);
    g = std::move(grad_in);
  };
  const auto block_back = [&]() {
    conv_step_back(true);
    --mask_idx;
    dropout_backward(g, tape.dropout_masks[mask_idx]);
    conv_step_back(true);
  };

  conv_step_back(false);  // head
  for (int i = 0; i < c.post_convs; ++i) conv_step_back(true);

  // decoder levels were traversed l = levels-2 .. 0, so they come back 0 .. levels-2
  std::vector<Tensor5<T>> skip_grads(size_t(c.levels - 1));
  for (int l = 0; l <= c.levels - 2; ++l) {
    block_back();
    const Tensor5<T>& skip = tape.skips[size_t(l)];
    Tensor5<T> gskip(skip.n, skip.c, skip.dx, skip.dy, skip.dz);
    Tensor5<T> gup(g.n, g.c - skip.c, g.dx, g.dy, g.dz);
    split_channels(g, gskip, gup);
    skip_grads[size_t(l)] = std::move(gskip);
    g = upsample2x_backward(gup, gup.dx / 2, gup.dy / 2, gup.dz / 2);
  }

  // bottleneck block, then pooled encoder levels
  block_back();
  for (int l = c.levels - 2; l >= 0; --l) {
    g = maxpool3d_backward(tape.skips[size_t(l)], g, tape.pool_argmax[size_t(l)]);
    const Tensor5<T>& extra = skip_grads[size_t(l)];
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += extra.data[i];
    block_back();
  }

  for (int i = 0; i < c.pre_convs; ++i) conv_step_back(true);
  return g;
}

// ---- cascade --------------------------------------------------------------------

template <class T>
CascadeLogits<T> cascade_forward(const CascadeModel<T>& m, const Tensor5<T>& x, bool training,
                                 Rng& rng, CascadeTape<T>* tape, bool run_stage3) {
  if (x.c != 1) throw ShapeMismatch("cascade_forward expects a single-channel image");
  CascadeTape<T> local;
  CascadeTape<T>& tp = tape ? *tape : local;

  CascadeLogits<T> out;
  out.p1 = stage_forward(m.stage1, x, training, rng, &tp.s1);
  out.p2 = stage_forward(m.stage2, concat_channels(out.p1, x), training, rng, &tp.s2);
  tp.ran_stage3 = run_stage3;
  if (run_stage3)
    out.p3 = stage_forward(m.stage3, concat_channels(out.p2, x), training, rng, &tp.s3);
  return out;
}

template <class T>
void cascade_backward(const CascadeModel<T>& m, const CascadeTape<T>& tape, const Tensor5<T>& g1,
                      const Tensor5<T>& g2, const Tensor5<T>& g3, CascadeGrads<T>& grads) {
  // the gradient wrt a stage's logits combines the direct loss term with the
  // contribution flowing back through the next stage's input concat
  Tensor5<T> g2_total = g2;
  if (tape.ran_stage3) {
    Tensor5<T> gin3 = stage_backward(m.stage3, tape.s3, g3, grads.s3);
    Tensor5<T> gp2(gin3.n, gin3.c - 1, gin3.dx, gin3.dy, gin3.dz);
    Tensor5<T> gx(gin3.n, 1, gin3.dx, gin3.dy, gin3.dz);
    split_channels(gin3, gp2, gx);
    for (size_t i = 0; i < g2_total.data.size(); ++i) g2_total.data[i] += gp2.data[i];
  }

  Tensor5<T> gin2 = stage_backward(m.stage2, tape.s2, g2_total, grads.s2);
  Tensor5<T> g1_total = g1;
  {
    Tensor5<T> gp1(gin2.n, gin2.c - 1, gin2.dx, gin2.dy, gin2.dz);
    Tensor5<T> gx(gin2.n, 1, gin2.dx, gin2.dy, gin2.dz);
    split_channels(gin2, gp1, gx);
    for (size_t i = 0; i < g1_total.data.size(); ++i) g1_total.data[i] += gp1.data[i];
  }

  stage_backward(m.stage1, tape.s1, g1_total, grads.s1);
}

// ---- checkpoint I/O ----------------------------------------------------------------

namespace {

constexpr char kCkptMagic[6] = {'C', 'S', 'E', 'G', '1', '\0'};

void put_u32(std::string& s, uint32_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char((v >> 8) & 0xff));
  s.push_back(char((v >> 16) & 0xff));
  s.push_back(char((v >> 24) & 0xff));
}

void append_tensor(std::string& out, const std::string& name, const std::vector<int64_t>& dims,
                   const float* data, size_t count) {
  out.push_back(char(name.size() & 0xff));
  out.push_back(char((name.size() >> 8) & 0xff));
  out += name;
  out.push_back(char(dims.size()));
  for (int64_t d : dims) put_u32(out, uint32_t(d));
  const size_t pos = out.size();
  out.resize(pos + count * 4);
  std::memcpy(out.data() + pos, data, count * 4);
}

void append_model(std::string& out, const char* prefix, const CascadeModel<float>& m,
                  uint32_t& tensor_count) {
  const char* stage_names[3] = {"s1", "s2", "s3"};
  const StageModel<float>* stages[3] = {&m.stage1, &m.stage2, &m.stage3};
  for (int s = 0; s < 3; ++s)
    for (const auto& p : stages[s]->convs) {
      const std::string base = std::string(prefix) + "/" + stage_names[s] + "/" + p.name;
      append_tensor(out, base + ".w", {p.w.n, p.w.c, p.w.dx, p.w.dy, p.w.dz}, p.w.data.data(),
                    p.w.data.size());
      append_tensor(out, base + ".b", {int64_t(p.b.size())}, p.b.data(), p.b.size());
      tensor_count += 2;
    }
}

}  // namespace

void save_checkpoint(const CascadeModel<float>& model, const CascadeModel<float>& ema,
                     const std::string& path) {
  nlohmann::json arch;
  arch["levels"] = model.stage1.cfg.levels;
  arch["base_filters"] = model.stage1.cfg.base_filters;
  arch["dropout_rate"] = model.stage1.cfg.dropout_rate;
  arch["relu_slope"] = model.stage1.cfg.relu_slope;
  const std::string arch_str = arch.dump();

  std::string body;
  uint32_t tensor_count = 0;
  append_model(body, "theta", model, tensor_count);
  append_model(body, "ema", ema, tensor_count);

  std::string out(kCkptMagic, 6);
  put_u32(out, uint32_t(arch_str.size()));
  out += arch_str;
  put_u32(out, tensor_count);
  out += body;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot open checkpoint " + path + " for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoFailure("checkpoint write failed: " + path);
}

namespace {

uint32_t read_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) throw TruncatedFile(path + ": checkpoint truncated");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open checkpoint " + path);
  char magic[6];
  f.read(magic, 6);
  if (f.gcount() != 6 || std::memcmp(magic, kCkptMagic, 6) != 0)
    throw BadMagic(path + ": not a checkpoint file");

  const uint32_t json_len = read_u32(f, path);
  std::string arch_str(json_len, '\0');
  f.read(arch_str.data(), json_len);
  if (f.gcount() != std::streamsize(json_len)) throw TruncatedFile(path + ": checkpoint truncated");
  const nlohmann::json arch = nlohmann::json::parse(arch_str);

  Checkpoint ck;
  ck.config.levels = arch.at("levels").get<int>();
  ck.config.base_filters = arch.at("base_filters").get<int>();
  ck.config.dropout_rate = arch.at("dropout_rate").get<double>();
  ck.config.relu_slope = arch.at("relu_slope").get<double>();

  Rng dummy(0);
  ck.model = build_cascade<float>(ck.config, dummy);
  ck.ema = build_cascade<float>(ck.config, dummy);

  const uint32_t tensor_count = read_u32(f, path);
  for (uint32_t t = 0; t < tensor_count; ++t) {
    unsigned char lb[2];
    f.read(reinterpret_cast<char*>(lb), 2);
    if (f.gcount() != 2) throw TruncatedFile(path + ": checkpoint truncated");
    const size_t name_len = size_t(lb[0]) | size_t(lb[1]) << 8;
    std::string name(name_len, '\0');
    f.read(name.data(), std::streamsize(name_len));
    char ndim_c;
    f.get(ndim_c);
    const int ndim = int(ndim_c);
    size_t count = 1;
    for (int d = 0; d < ndim; ++d) count *= read_u32(f, path);
    std::vector<float> data(count);
    f.read(reinterpret_cast<char*>(data.data()), std::streamsize(count * 4));
    if (f.gcount() != std::streamsize(count * 4)) throw TruncatedFile(path + ": checkpoint truncated");

    // route by name: <theta|ema>/<s1|s2|s3>/<conv>.<w|b>
    const auto slash1 = name.find('/');
    const auto slash2 = name.find('/', slash1 + 1);
    const auto dot = name.rfind('.');
    if (slash1 == std::string::npos || slash2 == std::string::npos || dot == std::string::npos)
      throw UnknownDtype(path + ": malformed tensor name " + name);
    const std::string which = name.substr(0, slash1);
    const std::string stage = name.substr(slash1 + 1, slash2 - slash1 - 1);
    const std::string conv = name.substr(slash2 + 1, dot - slash2 - 1);
    const std::string kind = name.substr(dot + 1);

    CascadeModel<float>& target = which == "ema" ? ck.ema : ck.model;
    StageModel<float>* sm = stage == "s1"   ? &target.stage1
                            : stage == "s2" ? &target.stage2
                                            : &target.stage3;
    bool found = false;
    for (auto& p : sm->convs)
      if (p.name == conv) {
        if (kind == "w") {
          if (p.w.data.size() != count)
            throw ArchitectureMismatch(path + ": tensor " + name + " has unexpected size");
          p.w.data.assign(data.begin(), data.end());
        } else {
          if (p.b.size() != count)
            throw ArchitectureMismatch(path + ": tensor " + name + " has unexpected size");
          p.b.assign(data.begin(), data.end());
        }
        found = true;
        break;
      }
    if (!found) throw ArchitectureMismatch(path + ": unknown tensor " + name);
  }
  return ck;
}

// ---- instantiations -----------------------------------------------------------------

#define CARESEG_NET_INSTANTIATE(T)                                                            \
  template StageModel<T> build_stage<T>(const StageConfig&, Rng&);                            \
  template CascadeModel<T> build_cascade<T>(const CascadeConfig&, Rng&);                      \
  template StageGrads<T> zero_grads<T>(const StageModel<T>&);                                 \
  template void add_scaled<T>(StageGrads<T>&, const StageGrads<T>&, T);                       \
  template CascadeGrads<T> zero_grads<T>(const CascadeModel<T>&);                             \
  template void add_scaled<T>(CascadeGrads<T>&, const CascadeGrads<T>&, T);                   \
  template Tensor5<T> stage_forward<T>(const StageModel<T>&, const Tensor5<T>&, bool, Rng&,   \
                                       StageTape<T>*);                                       \
  template Tensor5<T> stage_backward<T>(const StageModel<T>&, const StageTape<T>&,            \
                                        const Tensor5<T>&, StageGrads<T>&);                  \
  template CascadeLogits<T> cascade_forward<T>(const CascadeModel<T>&, const Tensor5<T>&,     \
                                               bool, Rng&, CascadeTape<T>*, bool);            \
  template void cascade_backward<T>(const CascadeModel<T>&, const CascadeTape<T>&,            \
                                    const Tensor5<T>&, const Tensor5<T>&, const Tensor5<T>&, \
                                    CascadeGrads<T>&);

CARESEG_NET_INSTANTIATE(float)
CARESEG_NET_INSTANTIATE(double)

#undef CARESEG_NET_INSTANTIATE

}  // namespace careseg
