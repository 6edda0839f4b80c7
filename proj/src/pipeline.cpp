#include "bvton/pipeline.hpp"

#include "bvton/checkpoint.hpp"
#include "bvton/image_io.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <sstream>

namespace bvton::pipeline {

namespace {

using config::PipelineConfig;
using Clock = std::chrono::steady_clock;

// Per-split base seeds; sample seeds are base + index.
std::uint64_t data_seed(const PipelineConfig& cfg, int split) { return cfg.seed * 1000000ULL + 300000ULL * split; }

std::uint64_t model_seed(const PipelineConfig& cfg, std::uint64_t salt) { return cfg.seed * 7919ULL + salt; }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<data::SampleRecord> load_split(const PipelineConfig& cfg, const std::string& split, const std::string& who) {
  const auto dir = cfg.data_dir(split);
  if (!std::filesystem::exists(dir / "manifest.tsv"))
    throw DependencyError(who + ": no " + split + " data in " + dir.string() + "; run gen-data first");
  return data::load_dataset(dir);
}

void require_checkpoint(const PipelineConfig& cfg, const std::string& stage, const std::string& who) {
  if (!std::filesystem::exists(cfg.checkpoint(stage)))
    throw DependencyError(who + ": missing " + cfg.checkpoint(stage).string() + "; run train-" + stage + " first");
}

template <typename M>
void load_into(const PipelineConfig& cfg, const std::string& stage, M& model, const std::string& who) {
  require_checkpoint(cfg, stage, who);
  ckpt::load(cfg.checkpoint(stage), model.params());
}

StageResult finish(const PipelineConfig& cfg, const std::string& stage, train::LossTrace trace, Clock::time_point t0,
                   const nn::ParamStore<Real>& params) {
  StageResult r{stage, std::move(trace), 0, {}};
  ckpt::save(cfg.checkpoint(stage), params);
  r.trace.write_tsv(cfg.log(stage));
  r.seconds = seconds_since(t0);
  return r;
}

std::function<void(int, double)> progress(const std::string& stage, int every = 50) {
  return [stage, every](int step, double loss) {
    if (step % every == 0) std::cerr << "[" << stage << "] step " << step << " loss " << loss << "\n";
  };
}

TensorF layout_rgb(const TensorF& layout) {
  const LabelMap labels = data::argmax_labels(layout);
  TensorF img(Shape{1, 3, layout.h(), layout.w()});
  for (int y = 0; y < img.h(); ++y)
    for (int x = 0; x < img.w(); ++x) {
      const auto c = data::palette_color(labels(y, x));
      for (int ch = 0; ch < 3; ++ch) img(0, ch, y, x) = io::dequantize(c[static_cast<std::size_t>(ch)]);
    }
  return img;
}

// Direction as hue, magnitude as saturation relative to the largest vector.
TensorF flow_rgb(const TensorF& flow) {
  TensorF img(Shape{1, 3, flow.h(), flow.w()});
  double peak = 1e-9;
  for (int y = 0; y < flow.h(); ++y)
    for (int x = 0; x < flow.w(); ++x) peak = std::max(peak, std::hypot(double(flow(0, 0, y, x)), double(flow(0, 1, y, x))));
  for (int y = 0; y < flow.h(); ++y)
    for (int x = 0; x < flow.w(); ++x) {
      const double dx = flow(0, 0, y, x), dy = flow(0, 1, y, x);
      const double a = std::atan2(dy, dx), m = std::hypot(dx, dy) / peak;
      for (int ch = 0; ch < 3; ++ch) {
        const double phase = a - ch * 2.0 * std::numbers::pi / 3.0;
        img(0, ch, y, x) = static_cast<Real>(1.0 - m * 0.5 * (1.0 - std::cos(phase)));
      }
    }
  return img;
}

int count_label(const LabelMap& labels, int label) { return static_cast<int>((labels.array() == label).count()); }

}  // namespace

std::string StageResult::summary() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: steps %zu  initial %.6g  final-mean %.6g  reduction %.4f  time %.1fs", stage.c_str(),
                trace.steps(), trace.head_mean(), trace.tail_mean(), trace.reduction(), seconds);
  os << buf;
  for (const auto& [k, v] : metrics) {
    std::snprintf(buf, sizeof buf, "  %s %.6g", k.c_str(), v);
    os << buf;
  }
  return os.str();
}

const char* to_string(TryonMode m) { return m == TryonMode::Conventional ? "conventional" : "high-fidelity"; }

TryonMode parse_tryon_mode(const std::string& s) {
  if (s == "conventional") return TryonMode::Conventional;
  if (s == "high-fidelity" || s == "highfidelity") return TryonMode::HighFidelity;
  throw config::ConfigError("unknown try-on mode '" + s + "' (conventional | high-fidelity)");
}

ClothesSource parse_clothes_source(const std::string& s) {
  if (s == "inshop") return ClothesSource::InShop;
  if (s == "model") return ClothesSource::Model;
  throw config::ConfigError("unknown clothes source '" + s + "' (inshop | model)");
}

lmgm::Config lmgm_config(const PipelineConfig& cfg) {
  lmgm::Config c;
  c.net.alpha = cfg.alpha;
  c.p = cfg.p;
  c.tau = cfg.tau;
  c.weights.lambda = cfg.lambda;
  return c;
}

utom::Config utom_config(const PipelineConfig& cfg) {
  utom::Config c;
  c.alpha_aug = cfg.alpha_aug;
  c.beta_aug = cfg.beta_aug;
  c.h_alpha = cfg.h_alpha;
  c.w_alpha = cfg.w_alpha;
  c.weights.lambda = cfg.lambda;
  return c;
}

train::StageOptions stage_options(const PipelineConfig& cfg, const config::Stage& s, std::uint64_t salt) {
  train::StageOptions o;
  o.steps = s.steps;
  o.epochs = s.epochs;
  o.batch = s.batch;
  o.lr = s.lr;
  o.lr_disc = s.lr_disc;
  o.beta1 = cfg.beta1;
  o.beta2 = cfg.beta2;
  o.seed = model_seed(cfg, salt) ^ 0xA5A5ULL;
  return o;
}

DataSummary gen_data(const PipelineConfig& cfg) {
  config::validate(cfg);
  DataSummary s;
  const auto paired = cfg.data_dir("paired"), unpaired = cfg.data_dir("unpaired"), test = cfg.data_dir("test");
  for (const auto& d : {paired, unpaired, test})
    if (std::filesystem::exists(d)) std::filesystem::remove_all(d);
  s.paired = static_cast<int>(
      data::write_dataset(cfg.n_paired, data::Mode::Paired, paired, data_seed(cfg, 0), cfg.height, cfg.width).size());
  s.unpaired = static_cast<int>(
      data::write_dataset(cfg.n_unpaired, data::Mode::Unpaired, unpaired, data_seed(cfg, 1), cfg.height, cfg.width)
          .size());
  if (cfg.n_test > 0) {
    const auto refs = data::write_dataset(cfg.n_test, data::Mode::Paired, test, data_seed(cfg, 2), cfg.height,
                                          cfg.width, {data::Style::Tucked});
    const auto donors = data::write_dataset(cfg.n_test, data::Mode::Paired, test, data_seed(cfg, 2) + 1000, cfg.height,
                                            cfg.width, {data::Style::Overlong, data::Style::Asymmetric});
    std::ostringstream os;
    os << "reference\tclothes\n";
    for (int i = 0; i < cfg.n_test; ++i) os << refs[i].id << '\t' << donors[i].id << '\n';
    io::write_text(test / "cases.tsv", os.str());
    s.test_cases = cfg.n_test;
  }
  return s;
}

StageResult train_ccm(const PipelineConfig& cfg) {
  config::validate(cfg);
  const auto t0 = Clock::now();
  const auto paired = load_split(cfg, "paired", "train-ccm");
  ccm::Model model(model_seed(cfg, 1));
  auto opt = stage_options(cfg, cfg.ccm, 1);
  opt.on_step = progress("ccm");
  flow::LossConfig loss;
  loss.tv_weight = cfg.ccm_tv;
  auto trace = ccm::train(model, paired, opt, loss);
  return finish(cfg, "ccm", std::move(trace), t0, model.params());
}

std::pair<int, int> extract_proxies(const PipelineConfig& cfg) {
  config::validate(cfg);
  const auto unpaired = load_split(cfg, "unpaired", "extract-proxies");
  ccm::Model model(model_seed(cfg, 1));
  load_into(cfg, "ccm", model, "extract-proxies");
  std::vector<ccm::CanonicalProxy> proxies;
  int valid = 0;
  for (const auto& s : unpaired) {
    proxies.push_back(ccm::extract_proxy(model, s));
    valid += proxies.back().valid ? 1 : 0;
  }
  if (std::filesystem::exists(cfg.proxy_dir())) std::filesystem::remove_all(cfg.proxy_dir());
  ccm::write_proxies(cfg.proxy_dir(), proxies, cfg.checkpoint("ccm").filename().string());
  return {valid, static_cast<int>(proxies.size()) - valid};
}

StageResult train_lmgm(const PipelineConfig& cfg) {
  config::validate(cfg);
  const auto t0 = Clock::now();
  std::vector<data::SampleRecord> people;
  std::vector<lmgm::Example> examples;
  if (cfg.lmgm_clothes == "proxy") {
    if (!std::filesystem::exists(cfg.proxy_dir() / "manifest.tsv"))
      throw DependencyError("train-lmgm: no canonical proxies in " + cfg.proxy_dir().string() +
                            "; run extract-proxies first");
    people = load_split(cfg, "unpaired", "train-lmgm");
    const auto proxies = ccm::read_proxies(cfg.proxy_dir());
    for (const auto& s : people) {
      const auto it = proxies.find(s.id);
      if (it != proxies.end() && it->second.valid) examples.push_back({&s, it->second.image, it->second.mask()});
    }
  } else {
    people = load_split(cfg, "paired", "train-lmgm");
    for (const auto& s : people) examples.push_back({&s, s.inshop_clothes(), s.inshop_mask});
  }
  if (examples.empty()) throw DependencyError("train-lmgm: no usable clothes for any sample");
  lmgm::Model model(model_seed(cfg, 2), lmgm_config(cfg));
  auto opt = stage_options(cfg, cfg.lmgm, 2);
  opt.on_step = progress("lmgm");
  auto trace = lmgm::train(model, examples, opt);
  auto r = finish(cfg, "lmgm", std::move(trace), t0, model.params());
  r.metrics["pixel_accuracy"] = lmgm::pixel_accuracy(model, examples);
  r.metrics["examples"] = static_cast<double>(examples.size());
  r.seconds = seconds_since(t0);
  return r;
}

StageResult train_mcdm(const PipelineConfig& cfg) {
  config::validate(cfg);
  const auto t0 = Clock::now();
  const auto paired = load_split(cfg, "paired", "train-mcdm");
  mcdm::Model model(model_seed(cfg, 3));
  auto opt = stage_options(cfg, cfg.mcdm, 3);
  opt.on_step = progress("mcdm");
  flow::LossConfig loss;
  loss.tv_weight = cfg.mcdm_tv;
  auto trace = mcdm::train(model, paired, opt, loss);
  return finish(cfg, "mcdm", std::move(trace), t0, model.params());
}

StageResult train_utom(const PipelineConfig& cfg) {
  config::validate(cfg);
  const auto t0 = Clock::now();
  const auto unpaired = load_split(cfg, "unpaired", "train-utom");
  utom::Model model(model_seed(cfg, 4), utom_config(cfg));
  auto opt = stage_options(cfg, cfg.utom, 4);
  opt.on_step = progress("utom");
  const double l1_before = utom::reconstruction_l1(model, unpaired, model_seed(cfg, 40), true);
  auto trace = utom::train(model, unpaired, opt);
  auto r = finish(cfg, "utom", std::move(trace), t0, model.params());
  r.metrics["recon_l1_initial"] = l1_before;
  r.metrics["recon_l1_final"] = utom::reconstruction_l1(model, unpaired, model_seed(cfg, 40), true);
  r.metrics["recon_ssim"] = utom::reconstruction_ssim(model, unpaired, false);
  r.seconds = seconds_since(t0);
  return r;
}

Inference::Inference(const PipelineConfig& cfg) {
  config::validate(cfg);
  ccm_ = std::make_unique<ccm::Model>(model_seed(cfg, 1));
  lmgm_ = std::make_unique<lmgm::Model>(model_seed(cfg, 2), lmgm_config(cfg));
  mcdm_ = std::make_unique<mcdm::Model>(model_seed(cfg, 3));
  utom_ = std::make_unique<utom::Model>(model_seed(cfg, 4), utom_config(cfg));
  load_into(cfg, "ccm", *ccm_, "tryon");
  load_into(cfg, "lmgm", *lmgm_, "tryon");
  load_into(cfg, "mcdm", *mcdm_, "tryon");
  load_into(cfg, "utom", *utom_, "tryon");
}

Inference::~Inference() = default;

std::pair<TensorF, TensorF> Inference::clothes_of(const data::SampleRecord& donor, ClothesSource source) const {
  if (source == ClothesSource::InShop) {
    require(donor.has_inshop, "tryon: sample " + donor.id + " has no in-shop clothes; use --clothes-source model");
    return {donor.inshop_clothes(), donor.inshop_mask};
  }
  const ccm::CanonicalProxy p = ccm::extract_proxy(*ccm_, donor);
  require(p.valid, "tryon: no canonical proxy for " + donor.id + ": " + p.diagnostic);
  return {p.image, p.mask()};
}

TryonResult Inference::run(const data::SampleRecord& person, const TensorF& clothes, const TensorF& clothes_mask,
                           TryonMode mode) const {
  require(clothes.h() == person.height() && clothes.w() == person.width(), "tryon: clothes/person size mismatch");
  TryonResult r;
  if (mode == TryonMode::Conventional) {
    const TensorF retain = lmgm::retain_mask(person.labels, true);
    r.layout = lmgm::predict_layout(*lmgm_, lmgm::make_inputs(clothes, clothes_mask, person, retain));
  } else {
    r.layout = lmgm::highfidelity_layout(*lmgm_, clothes, clothes_mask, person, person.mask(data::kBottom)).layout;
  }
  const LabelMap labels = data::argmax_labels(r.layout);
  const TensorF upper = lmgm::upper_channel_mask(r.layout);
  const mcdm::Deformed d = mcdm::deform_clothes(*mcdm_, clothes, clothes_mask, upper, person.heatmaps);
  r.warped = train::masked(d.warped, upper);
  r.flow = d.flow;
  r.keep = utom::keep_mask(person.labels, labels);
  r.image = utom::synthesize(*utom_, utom::agnostic_person(person.person, person.labels), r.warped, r.layout, upper,
                             &person.person, &r.keep);
  r.bottom_area = count_label(labels, data::kBottom);
  return r;
}

data::SampleRecord find_sample(const PipelineConfig& cfg, const std::string& id) {
  for (const char* split : {"paired", "unpaired", "test"}) {
    const auto dir = cfg.data_dir(split);
    if (!std::filesystem::exists(dir / "manifest.tsv")) continue;
    for (const auto& e : data::read_manifest(dir))
      if (e.id == id) return data::read_sample(e, dir);
  }
  throw ContractError("unknown sample id '" + id + "'");
}

std::vector<TestCase> read_test_cases(const PipelineConfig& cfg) {
  const auto path = cfg.data_dir("test") / "cases.tsv";
  if (!std::filesystem::exists(path)) throw DependencyError("no test cases in " + path.string() + "; run gen-data first");
  std::istringstream is(io::read_text(path));
  std::string line;
  std::getline(is, line);
  std::vector<TestCase> cases;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw io::FormatError(path.string() + ": malformed line: " + line);
    cases.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return cases;
}

TryonResult tryon(const PipelineConfig& cfg, const std::string& person_id, const std::string& clothes_id,
                  ClothesSource source, TryonMode mode, const std::filesystem::path& out_dir) {
  const Inference inf(cfg);
  const data::SampleRecord person = find_sample(cfg, person_id);
  const data::SampleRecord donor = clothes_id == person_id ? person : find_sample(cfg, clothes_id);
  const auto [clothes, mask] = inf.clothes_of(donor, source);
  TryonResult r = inf.run(person, clothes, mask, mode);
  io::write_ppm(out_dir / "final.ppm", r.image);
  io::write_ppm(out_dir / "layout.ppm", layout_rgb(r.layout));
  io::write_ppm(out_dir / "warped.ppm", r.warped);
  io::write_ppm(out_dir / "flow.ppm", flow_rgb(r.flow));
  io::write_ppm(out_dir / "clothes.ppm", clothes);
  io::write_mask(out_dir / "keep.pgm", r.keep);
  return r;
}

metrics::Report eval(const PipelineConfig& cfg, const std::string& split) {
  metrics::Report rep;
  blocks::FeatureExtractor<Real> fx;
  if (split == "self") {
    const auto people = load_split(cfg, "paired", "eval");
    std::vector<TensorF> imgs;
    for (const auto& s : people) imgs.push_back(s.person);
    double ssim = 0;
    for (const auto& s : people) ssim += metrics::ssim(s.person, s.person);
    for (const char* m : {"conventional", "high-fidelity"}) {
      rep.add("ssim", split, m, ssim / static_cast<double>(people.size()));
      rep.add("frechet_surrogate", split, m, metrics::frechet_feature_distance(imgs, imgs, fx));
    }
    return rep;
  }
  const Inference inf(cfg);
  if (split == "train") {
    // reconstruction from each unpaired photo's own canonical proxy
    const auto people = load_split(cfg, "unpaired", "eval");
    for (TryonMode mode : {TryonMode::Conventional, TryonMode::HighFidelity}) {
      std::vector<TensorF> outs, reals;
      double ssim = 0, perc = 0;
      int used = 0;
      for (const auto& s : people) {
        const ccm::CanonicalProxy p = ccm::extract_proxy(inf.ccm(), s);
        if (!p.valid) continue;
        const TryonResult r = inf.run(s, p.image, p.mask(), mode);
        ssim += metrics::ssim(r.image, s.person);
        perc += metrics::perceptual_distance(r.image, s.person, fx);
        outs.push_back(r.image);
        reals.push_back(s.person);
        ++used;
      }
      require(used > 0, "eval: no sample with a valid proxy");
      rep.add("ssim", split, to_string(mode), ssim / used);
      rep.add("perceptual_surrogate", split, to_string(mode), perc / used);
      rep.add("frechet_surrogate", split, to_string(mode), metrics::frechet_feature_distance(outs, reals, fx));
    }
    return rep;
  }
  if (split == "test") {
    const auto cases = read_test_cases(cfg);
    for (TryonMode mode : {TryonMode::Conventional, TryonMode::HighFidelity}) {
      std::vector<TensorF> outs, reals;
      double ssim = 0, perc = 0, bottom = 0;
      for (const auto& c : cases) {
        const auto ref = find_sample(cfg, c.reference);
        const auto donor = find_sample(cfg, c.clothes);
        // reconstruction with the reference's own in-shop top
        const TryonResult self = inf.run(ref, ref.inshop_clothes(), ref.inshop_mask, mode);
        ssim += metrics::ssim(self.image, ref.person);
        perc += metrics::perceptual_distance(self.image, ref.person, fx);
        const TryonResult cross = inf.run(ref, donor.inshop_clothes(), donor.inshop_mask, mode);
        bottom += cross.bottom_area;
        outs.push_back(cross.image);
        reals.push_back(donor.person);
      }
      const double n = static_cast<double>(cases.size());
      require(n > 0, "eval: empty test split");
      rep.add("ssim", split, to_string(mode), ssim / n);
      rep.add("perceptual_surrogate", split, to_string(mode), perc / n);
      rep.add("frechet_surrogate", split, to_string(mode), metrics::frechet_feature_distance(outs, reals, fx));
      rep.add("bottom_area", split, to_string(mode), bottom / n);
    }
    return rep;
  }
  throw config::ConfigError("unknown eval split '" + split + "' (train | test | self)");
}

metrics::Report size_sweep(const PipelineConfig& cfg, int steps) {
  require(steps > 0, "size_sweep: steps must be positive");
  metrics::Report rep;
  const auto people = load_split(cfg, "unpaired", "eval --sweep");
  if (!std::filesystem::exists(cfg.proxy_dir() / "manifest.tsv"))
    throw DependencyError("eval --sweep: no canonical proxies; run extract-proxies first");
  const auto proxies = ccm::read_proxies(cfg.proxy_dir());
  blocks::FeatureExtractor<Real> fx;
  const Inference inf(cfg);
  const int n = static_cast<int>(people.size());
  for (int size : {std::max(2, n / 4), std::max(2, n / 2), n}) {
    const std::vector<data::SampleRecord> subset(people.begin(), people.begin() + std::min(size, n));
    std::vector<lmgm::Example> ex;
    for (const auto& s : subset) {
      const auto it = proxies.find(s.id);
      if (it != proxies.end() && it->second.valid) ex.push_back({&s, it->second.image, it->second.mask()});
    }
    require(!ex.empty(), "size_sweep: no valid proxies in the subset");
    lmgm::Model lm(model_seed(cfg, 2), lmgm_config(cfg));
    utom::Model um(model_seed(cfg, 4), utom_config(cfg));
    auto lo = stage_options(cfg, cfg.lmgm, 2);
    auto uo = stage_options(cfg, cfg.utom, 4);
    lo.steps = uo.steps = steps;
    lmgm::train(lm, ex, lo);
    utom::train(um, subset, uo);
    std::vector<TensorF> outs, reals;
    for (const auto& e : ex) {
      const auto& s = *e.person;
      const TensorF layout = lmgm::predict_layout(
          lm, lmgm::make_inputs(e.clothes, e.clothes_mask, s, lmgm::retain_mask(s.labels, true)));
      const TensorF upper = lmgm::upper_channel_mask(layout);
      const auto d = mcdm::deform_clothes(inf.mcdm(), e.clothes, e.clothes_mask, upper, s.heatmaps);
      const TensorF keep = utom::keep_mask(s.labels, data::argmax_labels(layout));
      outs.push_back(utom::synthesize(um, utom::agnostic_person(s.person, s.labels), train::masked(d.warped, upper),
                                      layout, upper, &s.person, &keep));
      reals.push_back(s.person);
    }
    rep.add("frechet_surrogate_n" + std::to_string(size), "sweep", "conventional",
            metrics::frechet_feature_distance(outs, reals, fx));
  }
  return rep;
}

}  // namespace bvton::pipeline
