#include "bvton/ccm.hpp"

#include "bvton/image_io.hpp"

#include <sstream>

namespace bvton::ccm {

TensorF remove_occlusion(const TensorF& clothes, const TensorF& occlusion, const warp::ControlGrid& theta_star) {
  require(occlusion.c() == 1 && occlusion.h() == clothes.h() && occlusion.w() == clothes.w(),
          "remove_occlusion: occlusion mask must be (1,1,H,W) on the clothes canvas size");
  // binarized so the removal is idempotent
  TensorF keep = warp::binarize(warp::apply_control_deform(occlusion, theta_star));
  keep.array() = Real(1) - keep.array();
  return train::masked(clothes, keep);
}

blocks::FlowConfig default_flow_config() {
  blocks::FlowConfig cfg;
  cfg.in_channels = kCondChannels;
  return cfg;
}

Example make_example(const data::SampleRecord& s) {
  require(s.has_inshop, "ccm: sample " + s.id + " has no in-shop clothes (paired data required)");
  require(s.part_masks.c() == data::kParts && s.inshop_parts.c() == data::kParts,
          "ccm: sample " + s.id + " lacks part masks");
  const TensorF keep = [&] {
    TensorF k = warp::apply_control_deform(s.occlusion_mask(), warp::reverse_params(s.theta));
    k.array() = Real(1) - k.array();
    return k;
  }();
  const TensorF clean = remove_occlusion(s.inshop_clothes(), s.occlusion_mask(), warp::reverse_params(s.theta));
  std::vector<TensorF> cond, tgt, tgt_m, src, src_m;
  for (int p = 0; p < data::kParts; ++p) {
    const TensorF pm = s.part_mask(p);
    const TensorF ip = s.inshop_part(p);
    const TensorF on_model = train::masked(s.person, pm);
    cond.push_back(train::cat({on_model, pm, s.heatmaps}));
    tgt.push_back(train::masked(clean, ip));
    tgt_m.push_back(train::masked(ip, keep));
    src.push_back(on_model);
    src_m.push_back(pm);
  }
  return {stack_samples<Real>(cond), stack_samples<Real>(tgt), stack_samples<Real>(tgt_m),
          stack_samples<Real>(src), stack_samples<Real>(src_m)};
}

train::LossTrace train(Model& model, const std::vector<data::SampleRecord>& paired, const train::StageOptions& opt,
                       const flow::LossConfig& loss) {
  require(!paired.empty(), "ccm::train: empty dataset");
  std::vector<Example> ex;
  ex.reserve(paired.size());
  for (const auto& s : paired) ex.push_back(make_example(s));
  auto build = [&](const std::vector<int>& idx) {
    std::vector<TensorF> c, t, tm, s, sm;
    for (int i : idx) {
      c.push_back(ex[i].cond);
      t.push_back(ex[i].target);
      tm.push_back(ex[i].target_mask);
      s.push_back(ex[i].source);
      sm.push_back(ex[i].source_mask);
    }
    return flow::Batch{stack_samples<Real>(c),
                       {stack_samples<Real>(t), stack_samples<Real>(tm), stack_samples<Real>(s), stack_samples<Real>(sm)}};
  };
  return flow::train_flow(model, static_cast<int>(ex.size()), build, opt, loss);
}

TensorF CanonicalProxy::mask() const {
  TensorF m(Shape{1, 1, part_masks.h(), part_masks.w()});
  for (int p = 0; p < part_masks.c(); ++p)
    for (int y = 0; y < m.h(); ++y)
      for (int x = 0; x < m.w(); ++x) m(0, 0, y, x) = std::max(m(0, 0, y, x), part_masks(0, p, y, x));
  return m;
}

CanonicalProxy extract_proxy(const Model& model, const data::SampleRecord& s) {
  CanonicalProxy out;
  out.id = s.id;
  const int h = s.height(), w = s.width();
  out.image = TensorF(Shape{1, 3, h, w});
  out.part_masks = TensorF(Shape{1, data::kParts, h, w});
  if (s.upper_mask().array().sum() == 0) {
    out.diagnostic = "no upper-clothes pixels in the layout";
    return out;
  }
  std::vector<TensorF> cond;
  for (int p = 0; p < data::kParts; ++p) {
    const TensorF pm = s.part_mask(p);
    cond.push_back(train::cat({train::masked(s.person, pm), pm, s.heatmaps}));
  }
  const TensorF flows = model.predict(stack_samples<Real>(cond));
  for (int p = 0; p < data::kParts; ++p) {
    const TensorF pm = s.part_mask(p);
    if (pm.array().sum() == 0) continue;
    const TensorF f = sample_of(flows, p);
    const TensorF img = backward_warp(train::masked(s.person, pm), f);
    const TensorF m = warp::binarize(backward_warp(pm, f));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (m(0, 0, y, x) == 0) continue;
        for (int c = 0; c < 3; ++c) out.image(0, c, y, x) = img(0, c, y, x);
        for (int q = 0; q < data::kParts; ++q) out.part_masks(0, q, y, x) = q == p ? 1 : 0;
      }
  }
  out.image = io::quantize_image(out.image);
  out.valid = true;
  return out;
}

void write_proxies(const std::filesystem::path& dir, const std::vector<CanonicalProxy>& proxies,
                   const std::string& source) {
  std::filesystem::create_directories(dir);
  std::ostringstream man;
  man << "id\tsource\tproxy_fnv1a\tparts_fnv1a\tstatus\n";
  for (const auto& p : proxies) {
    if (!p.valid) {
      man << p.id << '\t' << source << "\t-\t-\tskipped: " << p.diagnostic << '\n';
      continue;
    }
    const auto d = dir / p.id;
    io::write_ppm(d / "proxy.ppm", p.image);
    io::write_ppm(d / "proxy_parts.ppm", p.part_masks);
    man << p.id << '\t' << source << '\t' << io::fnv1a_file(d / "proxy.ppm") << '\t'
        << io::fnv1a_file(d / "proxy_parts.ppm") << "\tok\n";
  }
  io::write_text(dir / "manifest.tsv", man.str());
}

std::map<std::string, CanonicalProxy> read_proxies(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.tsv";
  if (!std::filesystem::exists(path)) throw io::FormatError("proxy store " + dir.string() + ": missing manifest.tsv");
  std::istringstream is(io::read_text(path));
  std::string line;
  std::getline(is, line);
  std::map<std::string, CanonicalProxy> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, source, c1, c2, status;
    std::getline(ls, id, '\t');
    std::getline(ls, source, '\t');
    std::getline(ls, c1, '\t');
    std::getline(ls, c2, '\t');
    std::getline(ls, status);
    CanonicalProxy p;
    p.id = id;
    if (status != "ok") {
      p.diagnostic = status;
      out[id] = p;
      continue;
    }
    const auto d = dir / id;
    if (io::fnv1a_file(d / "proxy.ppm") != c1 || io::fnv1a_file(d / "proxy_parts.ppm") != c2)
      throw io::FormatError("proxy " + id + ": checksum mismatch");
    p.image = io::read_ppm(d / "proxy.ppm");
    p.part_masks = io::read_ppm(d / "proxy_parts.ppm");
    p.valid = true;
    out[id] = p;
  }
  return out;
}

}  // namespace bvton::ccm
