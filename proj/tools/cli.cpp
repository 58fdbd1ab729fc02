#include "cli.hpp"

#include <hiflow/hiflow.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

namespace hiflow::cli {
namespace {

namespace fs = std::filesystem;

// Flags shared by every subcommand.
struct Common {
    std::string out = ".";
    std::uint64_t seed = 0;
    std::string config;
    std::map<std::string, std::string> model_values;
    CLI::App* active = nullptr;  // the parsed subcommand
};

const std::map<std::string, std::string>& model_flag_help() {
    static const std::map<std::string, std::string> help{
        {"task", "sr or denoise"},
        {"scale", "Upscaling factor 1..4 (sr)"},
        {"in_channels", "Image channels, 1 or 3"},
        {"channels", "Embedding width C"},
        {"heads", "Attention heads"},
        {"gamma", "FFN expansion factor"},
        {"p", "Window side"},
        {"s", "Windows per block side"},
        {"shift", "Cyclic shift on every other layer (true/false)"},
        {"variant", "Layer design v1, v2, v3 or v4"},
        {"stages", "Stages (columnar) or stages per level (u-shape)"},
        {"layers_per_stage", "Layers in each stage"},
        {"conv_kind", "Stage-closing block: conv1, linear or conv3"},
        {"score_kind", "Attention score: dot or cosine"},
        {"tau", "Cosine score temperature"},
        {"tree_grid", "Grid side of the v4 third level"},
        {"pad", "Reflect-pad inputs to the block multiple (true/false)"},
        {"init", "Init scheme: default, kaiming, xavier, zero_ln, residual_rescale, weight_rescale, trunc_normal"},
    };
    return help;
}

void add_common(CLI::App* sub, Common& c, bool model_flags) {
    sub->add_option("--out", c.out, "Output directory (created if missing)")->capture_default_str();
    sub->add_option("--seed", c.seed, "Seed for every random draw")->capture_default_str();
    if (!model_flags) return;
    sub->add_option("--config", c.config, "Model config file (key = value lines)");
    for (const auto& key : config_keys())
        sub->add_option("--" + key, c.model_values[key], model_flag_help().at(key));
}

HiIRConfig resolve_config(const Common& c, std::string* init_name) {
    HiIRConfig cfg;
    if (!c.config.empty()) cfg = load_config(c.config, init_name);
    auto given = [&](const std::string& key) { return c.active->get_option("--" + key)->count() > 0; };
    // task first so an explicit --scale is not reset by it
    if (given("task")) apply_config_key(cfg, "task", c.model_values.at("task"), init_name);
    for (const auto& key : config_keys())
        if (key != "task" && given(key)) apply_config_key(cfg, key, c.model_values.at(key), init_name);
    cfg.validate();
    return cfg;
}

fs::path out_path(const Common& c, const std::string& name) {
    fs::create_directories(c.out);
    return fs::path(c.out) / name;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p);
    if (!os) throw Error("cannot write " + p.string());
    return os;
}

AttnVariant parse_probe_variant(const std::string& s) {
    if (s == "window" || s == "v1-l1") return AttnVariant::V1_L1;
    if (s == "v1-l2") return AttnVariant::V1_L2;
    if (s == "v2") return AttnVariant::V2;
    if (s == "v3") return AttnVariant::V3;
    if (s == "v4") return AttnVariant::V4;
    throw ConfigError("unknown variant '" + s + "' (expected window, v1-l1, v1-l2, v2, v3 or v4)");
}

std::vector<Image> training_images(const std::vector<std::string>& files, std::size_t n, std::size_t size,
                                   std::size_t channels, std::uint64_t seed) {
    if (files.empty()) return synthetic_images(n, size, size, channels, seed);
    std::vector<Image> out;
    for (const auto& f : files) out.push_back(load_image(f));
    return out;
}

// Fresh layers start with zero output projections; random weights make every path carry signal.
void randomize_layer(TIFMLayer<double>& l, Rng& rng) {
    l.visit("", [&](const ParamInfo& info, Tensor<double>& t) {
        if (!info.trainable) return;
        for (auto& e : t.data()) e = (info.role == ParamRole::NormScale ? 1.0 : 0.0) + rng.normal(0, 0.3);
    });
}

// ---------------------------------------------------------------------------
// check

struct Check {
    std::string name;
    bool slow;
    std::function<std::string()> run;  // empty string on success, otherwise a diagnostic
};

std::vector<Check> invariant_checks(std::uint64_t seed) {
    std::vector<Check> checks;
    checks.push_back({"permutation round trips", false, [seed] {
                          Rng rng(seed);
                          for (int t = 0; t < 50; ++t) {
                              const std::size_t p = 1 + rng.index(4), s = 1 + rng.index(3);
                              const std::size_t H = p * s * (1 + rng.index(3)), W = p * s * (1 + rng.index(3));
                              const WindowGeom g{H, W, p, s, 0};
                              const auto x = randn<float>({1 + rng.index(2), H, W, 1 + rng.index(4)}, rng);
                              const std::size_t B = x.dim(0);
                              if (window_reverse(window_partition(x, g), g, B).values() != x.values() ||
                                  l2_unpermute(l2_permute(x, g), g, B).values() != x.values())
                                  return "round trip failed for " + to_string(x.shape());
                          }
                          return std::string();
                      }});
    checks.push_back({"op gradients", false, [seed] {
                          Rng rng(seed);
                          const auto x = randn<double>({3, 5}, rng);
                          const auto w = randn<double>({3, 5}, rng);
                          const auto g = randn<double>({5}, rng), b = randn<double>({5}, rng);
                          const std::vector<std::pair<std::string, std::function<Tensor<double>(const Tensor<double>&)>>>
                              fns{{"softmax", [&](const Tensor<double>& t) { return sum(mul(softmax_lastdim(t), w)); }},
                                  {"gelu", [&](const Tensor<double>& t) { return sum(mul(gelu(t), w)); }},
                                  {"layer_norm",
                                   [&](const Tensor<double>& t) { return sum(mul(layer_norm(t, g, b, 1e-6), w)); }}};
                          for (const auto& [name, f] : fns)
                              if (const double e = grad_check<double>(f, x); !(e < 1e-5))
                                  return name + " relative error " + std::to_string(e);
                          return std::string();
                      }});
    checks.push_back({"worked complexity value", false, [] {
                          ComplexityArgs a;
                          const double t = analytic_complexity(AttnKind::Proposed, a).time();
                          return t == 16121856.0 ? std::string() : "got " + std::to_string(t);
                      }});
    checks.push_back({"warmup closed form", false, [] {
                          const WarmupSchedule s{2e-4, 500, {}};
                          for (long it : {1L, 100L, 250L, 499L, 500L})
                              if (lr_at(s, it) != 2e-4 * double(it) / 500) return "mismatch at " + std::to_string(it);
                          return std::string();
                      }});
    checks.push_back({"columnar output shapes", false, [seed] {
                          Rng rng(seed);
                          for (std::size_t r : {2u, 3u, 4u}) {
                              HiIRConfig cfg;
                              cfg.scale = r;
                              cfg.channels = 8;
                              cfg.layers_per_stage = 1;
                              const auto m = Model<float>::build(cfg, rng);
                              const auto y = m.forward(Tensor<float>({1, 13, 17, 3}));
                              if (y.shape() != Shape{1, 13 * r, 17 * r, 3}) return "r=" + std::to_string(r);
                          }
                          return std::string();
                      }});
    checks.push_back({"u-shape zero-branch identity", false, [seed] {
                          Rng rng(seed);
                          HiIRConfig cfg;
                          cfg.task = Task::Denoise;
                          cfg.scale = 1;
                          cfg.channels = 4;
                          cfg.heads = 1;
                          cfg.p = 1;
                          cfg.layers_per_stage = 1;
                          auto m = Model<double>::build(cfg, rng);
                          m.zero_tail();
                          const auto x = randn<double>({1, 19, 21, 3}, rng);
                          return m.forward(x).values() == x.values() ? std::string() : std::string("output differs");
                      }});
    checks.push_back({"score gradient scaling", false, [seed] {
                          const auto dot = score_gradient_scaling(ScoreKind::DotProduct, 1e-3, 16, 100, seed);
                          const auto cos = score_gradient_scaling(ScoreKind::CosineSim, 1e-3, 16, 100, seed);
                          if (std::abs(dot.max_ratio - 1) > 1e-9 || std::abs(dot.min_ratio - 1) > 1e-9)
                              return std::string("dot-product gradient changed");
                          if (std::abs(cos.min_ratio / 1000 - 1) > 0.01 || std::abs(cos.max_ratio / 1000 - 1) > 0.01)
                              return std::string("cosine gradient ratio off 1000");
                          return std::string();
                      }});
    checks.push_back({"conv block ordering", false, [] {
                          for (std::size_t c : {16u, 32u, 64u})
                              if (!(conv_block_weight_count(ConvKind::Linear, c) <
                                        conv_block_weight_count(ConvKind::Conv3, c) &&
                                    conv_block_weight_count(ConvKind::Conv3, c) <
                                        conv_block_weight_count(ConvKind::Conv1, c)))
                                  return "C=" + std::to_string(c);
                          return std::string();
                      }});
    checks.push_back({"v3 layer gradient", true, [seed] {
                          Rng rng(seed);
                          LayerOptions o;
                          o.channels = 8;
                          const auto layer = LayerSpec{AttnVariant::V3, false}.instantiate<double>(o, rng);
                          const WindowGeom g{8, 8, 2, 2, 0};
                          const auto readout = randn<double>({1, 8, 8, 8}, rng);
                          const double e = grad_check<double>(
                              [&](const Tensor<double>& t) { return sum(mul(hiir_layer(t, layer, g), readout)); },
                              randn<double>({1, 8, 8, 8}, rng));
                          return e < 1e-5 ? std::string() : "relative error " + std::to_string(e);
                      }});
    checks.push_back({"v3 linear-ffn footprint", true, [seed] {
                          Rng rng(seed);
                          LayerOptions o;
                          o.channels = 8;
                          auto layer = LayerSpec{AttnVariant::V3, false}.instantiate<double>(o, rng);
                          randomize_layer(layer, rng);
                          layer.ffn.use_depthwise = false;
                          const WindowGeom g{32, 32, 4, 2, 0};
                          const auto fp = receptive_field_probe(
                              [&](const Tensor<double>& t) { return hiir_layer(t, layer, g); }, {1, 32, 32, 8}, 13, 22,
                              seed);
                          return fp.is_rect(8, 16, 8, 8) ? std::string() : std::string("footprint is not the block");
                      }});
    return checks;
}

int cmd_check(bool all, std::uint64_t seed, std::ostream& out) {
    std::size_t passed = 0, ran = 0;
    for (const auto& c : invariant_checks(seed)) {
        if (c.slow && !all) continue;
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        std::string msg;
        try {
            msg = c.run();
        } catch (const std::exception& e) {
            msg = std::string("threw: ") + e.what();
        }
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        out << (msg.empty() ? "PASS " : "FAIL ") << c.name << " (" << long(ms) << " ms)";
        if (!msg.empty()) out << ": " << msg;
        out << '\n';
        passed += msg.empty();
    }
    out << passed << '/' << ran << " checks passed\n";
    return passed == ran ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
    std::string kind = "proposed";
    std::size_t B = 1, H = 64, W = 64, C = 16, p = 8, s = 2, gamma = 2, heads = 2;
};

int cmd_bench(const BenchArgs& b, const Common& c, std::ostream& out) {
    const AttnKind kind = parse_attn_kind(b.kind);
    const ComplexityArgs a{double(b.B), double(b.H), double(b.W), double(b.C),
                           double(b.p), double(b.s), double(b.gamma), double(b.heads)};
    const auto rep = analytic_complexity(kind, a);

    // The empirical count runs one layer of the matching attention type.
    WindowGeom g{b.H, b.W, b.p, b.s, 0};
    AttnVariant v = AttnVariant::V3;
    if (kind != AttnKind::Proposed) {
        v = AttnVariant::V1_L1;
        g.s = 1;
        if (kind == AttnKind::WindowAttnLarge) g.p = b.p * b.s;
        if (kind == AttnKind::GlobalAttn) {
            if (b.H != b.W) throw ConfigError("bench: global attention needs H = W");
            g.p = b.H;
        }
    }
    if (b.H % (g.p * g.s) || b.W % (g.p * g.s)) throw GeometryError("bench: H and W must be multiples of the block side");
    Rng rng(c.seed);
    LayerOptions o;
    o.channels = b.C;
    o.heads = b.heads;
    o.gamma = b.gamma;
    const auto layer = LayerSpec{v, false}.instantiate<float>(o, rng);
    const auto emp = layer_flops(layer, g, b.B, b.C);

    std::ostringstream csv;
    csv.precision(12);
    csv << "kind,B,H,W,C,p,s,gamma,heads,analytic_macs,empirical_macs,ratio,analytic_space\n"
        << to_string(kind) << ',' << b.B << ',' << b.H << ',' << b.W << ',' << b.C << ',' << b.p << ',' << b.s << ','
        << b.gamma << ',' << b.heads << ',' << rep.time() << ',' << emp << ',' << double(emp) / rep.time() << ','
        << rep.space() << '\n';
    out << csv.str();
    open_out(out_path(c, "bench.csv")) << csv.str();
    return 0;
}

// ---------------------------------------------------------------------------
// probe-rf

struct ProbeArgs {
    std::string variant = "v3";
    std::size_t H = 32, W = 32, C = 8, p = 4, s = 2, y = 8, x = 8, layers = 1;
    bool linear_ffn = false;
};

int cmd_probe_rf(const ProbeArgs& a, const Common& c, std::ostream& out) {
    const auto v = parse_probe_variant(a.variant);
    const WindowGeom g{a.H, a.W, a.p, v == AttnVariant::V1_L1 ? 1 : a.s, 0};
    Rng rng(c.seed);
    LayerOptions o;
    o.channels = a.C;
    std::vector<TIFMLayer<double>> layers;
    for (std::size_t i = 0; i < a.layers; ++i) {
        auto l = LayerSpec{v, false}.instantiate<double>(o, rng);
        randomize_layer(l, rng);
        l.ffn.use_depthwise = !a.linear_ffn;
        layers.push_back(std::move(l));
    }
    const auto fp = receptive_field_probe(
        [&](const Tensor<double>& t) {
            Tensor<double> h = t;
            for (const auto& l : layers) h = hiir_layer(h, l, g);
            return h;
        },
        {1, a.H, a.W, a.C}, a.y, a.x, c.seed);
    save_image(out_path(c, "footprint.pgm").string(), fp.to_image());
    std::ostringstream csv;
    csv << "variant,layers,y,x,count,y_min,y_max,x_min,x_max,box_height,box_width\n"
        << a.variant << ',' << a.layers << ',' << a.y << ',' << a.x << ',' << fp.count << ',' << fp.y_min << ','
        << fp.y_max << ',' << fp.x_min << ',' << fp.x_max << ',' << fp.box_height() << ',' << fp.box_width() << '\n';
    out << csv.str();
    open_out(out_path(c, "footprint.csv")) << csv.str();
    return 0;
}

// ---------------------------------------------------------------------------
// grad-compare

struct GradArgs {
    std::size_t depth = 8;
    std::string score = "both";
    double query_scale = 1.0;
};

int cmd_grad_compare(const GradArgs& a, const Common& c, std::ostream& out) {
    std::vector<ScoreKind> kinds;
    if (a.score == "both")
        kinds = {ScoreKind::DotProduct, ScoreKind::CosineSim};
    else
        kinds = {parse_score_kind(a.score)};
    std::vector<double> maxima;
    for (const auto k : kinds) {
        StackProbeOptions o;
        o.depth = a.depth;
        o.score = k;
        o.seed = c.seed;
        o.query_scale = a.query_scale;
        const auto rep = attention_stack_probe(o);
        auto os = open_out(out_path(c, "grad_" + to_string(k) + ".csv"));
        rep.write_csv(os);
        maxima.push_back(rep.max_abs());
        out << to_string(k) << " max_grad " << rep.max_abs() << " qk_max_grad " << rep.max_abs_matching(".q.") << '\n';
    }
    if (maxima.size() == 2) out << "cosine/dot max_grad ratio " << maxima[1] / maxima[0] << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// plateau

struct PlateauArgs {
    std::size_t B = 1, H = 64, W = 64, C = 16, s = 2, gamma = 2, heads = 2;
    std::vector<std::size_t> sizes{8, 16, 32};
};

int cmd_plateau(const PlateauArgs& a, const Common& c, std::ostream& out) {
    const ComplexityArgs base{double(a.B), double(a.H), double(a.W), double(a.C),
                              double(a.sizes.front()), double(a.s), double(a.gamma), double(a.heads)};
    const auto rows = window_plateau_harness(base, a.sizes);
    std::ostringstream csv;
    write_plateau_csv(csv, rows);
    out << csv.str();
    open_out(out_path(c, "plateau.csv")) << csv.str();
    return 0;
}

// ---------------------------------------------------------------------------
// train / shift-ablate / infer / inspect

struct TrainArgs {
    std::vector<std::string> images;
    std::size_t count = 8, size = 32, batch = 4, crop = 0;
    long iters = 100, warmup = 0;
    double lr = 1e-3, sigma = 25;
};

Dataset build_dataset(const HiIRConfig& cfg, const TrainArgs& a, std::uint64_t seed) {
    const auto clean = training_images(a.images, a.count, a.size, cfg.in_channels, seed);
    return cfg.task == Task::Denoise ? make_denoise_dataset(clean, a.sigma, seed + 1) : make_sr_dataset(clean, cfg.scale);
}

TrainOptions train_options(const TrainArgs& a, std::uint64_t seed) {
    TrainOptions opt;
    opt.iters = a.iters;
    opt.batch = a.batch;
    opt.crop = a.crop;
    opt.seed = seed;
    opt.schedule = standard_schedule(a.lr, std::max(a.iters, 1L), a.warmup);
    return opt;
}

int cmd_train(const TrainArgs& a, const Common& c, std::ostream& out) {
    std::string init_name = "default";
    const auto cfg = resolve_config(c, &init_name);
    const auto data = build_dataset(cfg, a, c.seed);
    auto trained = train_toy<float>(cfg, data, train_options(a, c.seed), parse_init_scheme(init_name, c.seed));
    {
        auto os = open_out(out_path(c, "loss.csv"));
        trained.result.write_csv(os);
    }
    save_checkpoint(out_path(c, "model.ckpt").string(), trained.model);
    open_out(out_path(c, "model.cfg")) << config_to_text(cfg, init_name);
    double before = 0, after = 0;
    for (const auto& pair : data) {
        const auto restored = infer(trained.model, pair.input);
        after += psnr(pair.target, restored) / double(data.size());
        if (cfg.task == Task::Denoise) before += psnr(pair.target, pair.input) / double(data.size());
    }
    const auto& L = trained.result.losses;
    if (!L.empty()) out << "loss " << L.front() << " -> " << L.back() << '\n';
    if (cfg.task == Task::Denoise) out << "psnr input " << before << " dB\n";
    out << "psnr output " << after << " dB\n";
    return 0;
}

int cmd_shift_ablate(const TrainArgs& a, const Common& c, std::ostream& out) {
    const auto cfg = resolve_config(c, nullptr);
    const auto rows = shift_ablation_harness(cfg, build_dataset(cfg, a, c.seed), train_options(a, c.seed));
    std::ostringstream csv;
    write_shift_csv(csv, rows);
    out << csv.str();
    open_out(out_path(c, "shift_ablation.csv")) << csv.str();
    return 0;
}

struct InferArgs {
    std::string checkpoint, input, output = "output.ppm";
};

int cmd_infer(const InferArgs& a, const Common& c, std::ostream& out) {
    const auto cfg = resolve_config(c, nullptr);
    Rng rng(c.seed);
    auto model = Model<float>::build(cfg, rng);
    load_checkpoint(a.checkpoint, model);
    const auto img = load_image(a.input);
    const auto result = infer(model, img);
    const auto path = out_path(c, a.output);
    save_image(path.string(), result);
    out << "wrote " << path.string() << " (" << result.height << 'x' << result.width << 'x' << result.channels
        << ")\n";
    return 0;
}

struct InspectArgs {
    std::size_t H = 64, W = 64;
};

int cmd_inspect(const InspectArgs& a, const Common& c, std::ostream& out) {
    std::string init_name = "default";
    const auto cfg = resolve_config(c, &init_name);
    Rng rng(c.seed);
    auto model = Model<float>::build(cfg, rng);
    const auto s = summarize(model, 1, a.H, a.W);
    out << config_to_text(cfg, init_name) << "parameters " << s.parameter_count << '\n'
        << "macs " << s.reference_macs << " at " << a.H << 'x' << a.W << '\n';
    std::ostringstream csv;
    csv << "module,parameters\n";
    for (const auto& [name, n] : s.breakdown) csv << name << ',' << n << '\n';
    out << csv.str();
    open_out(out_path(c, "inspect.csv")) << csv.str();
    return 0;
}

void add_train_flags(CLI::App* sub, TrainArgs& t) {
    sub->add_option("--image", t.images, "Training image (PPM/PGM/HIFT); repeatable. Synthetic images when absent");
    sub->add_option("--count", t.count, "Number of synthetic images")->capture_default_str();
    sub->add_option("--size", t.size, "Side of synthetic images")->capture_default_str();
    sub->add_option("--sigma", t.sigma, "Noise std in 8-bit units (denoising)")->capture_default_str();
    sub->add_option("--iters", t.iters, "Training iterations")->capture_default_str();
    sub->add_option("--batch", t.batch, "Crops per iteration")->capture_default_str();
    sub->add_option("--crop", t.crop, "Input crop side; 0 uses the full image")->capture_default_str();
    sub->add_option("--lr", t.lr, "Base learning rate")->capture_default_str();
    sub->add_option("--warmup", t.warmup, "Linear warmup iterations")->capture_default_str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hierarchical information-flow restoration toolkit", "hiflow"};
    app.require_subcommand(1, 1);

    Common common;
    bool all = false;
    BenchArgs bench;
    ProbeArgs probe;
    GradArgs grad;
    PlateauArgs plateau;
    TrainArgs train_args;
    InferArgs infer_args;
    InspectArgs inspect;

    auto* check = app.add_subcommand("check", "Run the built-in invariant suite");
    check->add_flag("--all", all, "Include the slower gradient and footprint checks");
    add_common(check, common, false);

    auto* b = app.add_subcommand("bench", "Analytic and measured MACs of one layer");
    b->add_option("--kind", bench.kind, "global, window, window-large or proposed")->capture_default_str();
    b->add_option("--B", bench.B, "Batch size")->capture_default_str();
    b->add_option("--H", bench.H, "Image height")->capture_default_str();
    b->add_option("--W", bench.W, "Image width")->capture_default_str();
    b->add_option("--C", bench.C, "Channels")->capture_default_str();
    b->add_option("--p", bench.p, "Window side")->capture_default_str();
    b->add_option("--s", bench.s, "Windows per block side")->capture_default_str();
    b->add_option("--gamma", bench.gamma, "FFN expansion")->capture_default_str();
    b->add_option("--heads", bench.heads, "Attention heads")->capture_default_str();
    add_common(b, common, false);

    auto* rf = app.add_subcommand("probe-rf", "Measure the receptive-field footprint of a layer stack");
    rf->add_option("--variant", probe.variant, "window, v1-l1, v1-l2, v2, v3 or v4")->capture_default_str();
    rf->add_option("--layers", probe.layers, "Stacked layers")->capture_default_str();
    rf->add_option("--H", probe.H, "Input height")->capture_default_str();
    rf->add_option("--W", probe.W, "Input width")->capture_default_str();
    rf->add_option("--C", probe.C, "Channels")->capture_default_str();
    rf->add_option("--p", probe.p, "Window side")->capture_default_str();
    rf->add_option("--s", probe.s, "Windows per block side")->capture_default_str();
    rf->add_option("--y", probe.y, "Output pixel row")->capture_default_str();
    rf->add_option("--x", probe.x, "Output pixel column")->capture_default_str();
    rf->add_flag("--linear-ffn", probe.linear_ffn, "Replace the depthwise FFN conv by the identity");
    add_common(rf, common, false);

    auto* gc = app.add_subcommand("grad-compare", "Parameter-gradient magnitudes of a v3 stack per score kind");
    gc->add_option("--depth", grad.depth, "Stacked layers")->capture_default_str();
    gc->add_option("--score", grad.score, "dot, cosine or both")->capture_default_str();
    gc->add_option("--query-scale", grad.query_scale, "Multiplier on every query projection")->capture_default_str();
    add_common(gc, common, false);

    auto* pl = app.add_subcommand("plateau", "Attention cost and memory against window size");
    pl->add_option("--sizes", plateau.sizes, "Window sides to compare")->delimiter(',')->capture_default_str();
    pl->add_option("--B", plateau.B, "Batch size")->capture_default_str();
    pl->add_option("--H", plateau.H, "Image height")->capture_default_str();
    pl->add_option("--W", plateau.W, "Image width")->capture_default_str();
    pl->add_option("--C", plateau.C, "Channels")->capture_default_str();
    pl->add_option("--s", plateau.s, "Windows per block side")->capture_default_str();
    pl->add_option("--gamma", plateau.gamma, "FFN expansion")->capture_default_str();
    pl->add_option("--heads", plateau.heads, "Attention heads")->capture_default_str();
    add_common(pl, common, false);

    auto* sa = app.add_subcommand("shift-ablate", "Train with and without the cyclic shift and compare PSNR");
    add_train_flags(sa, train_args);
    add_common(sa, common, true);

    auto* tr = app.add_subcommand("train", "Train a toy model; writes loss.csv, model.ckpt and model.cfg");
    add_train_flags(tr, train_args);
    add_common(tr, common, true);

    auto* in = app.add_subcommand("infer", "Restore one image with a trained checkpoint");
    in->add_option("--checkpoint", infer_args.checkpoint, "Checkpoint written by train")->required();
    in->add_option("--input", infer_args.input, "Input image (PPM/PGM/HIFT)")->required();
    in->add_option("--output", infer_args.output, "Output file name inside --out")->capture_default_str();
    add_common(in, common, true);

    auto* ins = app.add_subcommand("inspect", "Print the resolved config, parameter breakdown and MACs");
    ins->add_option("--H", inspect.H, "Height for the MAC count")->capture_default_str();
    ins->add_option("--W", inspect.W, "Width for the MAC count")->capture_default_str();
    add_common(ins, common, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    common.active = app.get_subcommands().front();
    try {
        if (*check) return cmd_check(all, common.seed, out);
        if (*b) return cmd_bench(bench, common, out);
        if (*rf) return cmd_probe_rf(probe, common, out);
        if (*gc) return cmd_grad_compare(grad, common, out);
        if (*pl) return cmd_plateau(plateau, common, out);
        if (*sa) return cmd_shift_ablate(train_args, common, out);
        if (*tr) return cmd_train(train_args, common, out);
        if (*in) return cmd_infer(infer_args, common, out);
        if (*ins) return cmd_inspect(inspect, common, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace hiflow::cli
