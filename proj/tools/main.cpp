#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "endol2h/dataset.hpp"
#include "endol2h/degrade.hpp"
#include "endol2h/errors.hpp"
#include "endol2h/image.hpp"
#include "endol2h/metrics.hpp"
#include "endol2h/runconfig.hpp"
#include "endol2h/stats.hpp"
#include "endol2h/trainer.hpp"

namespace fs = std::filesystem;
using namespace endol2h;

namespace {

void apply_preset(RunConfig& rc, const std::string& preset) {
    if (preset.empty()) return;
    int scale;
    if (preset == "desk-8x")
        scale = 8;
    else if (preset == "desk-10x")
        scale = 10;
    else if (preset == "desk-12x")
        scale = 12;
    else
        throw ConfigError("unknown preset '" + preset + "' (desk-8x|desk-10x|desk-12x)");
    // toy-scale settings sized for minutes-long CPU runs
    rc.set_default("gen.scale", scale);
    rc.set_default("gen.depth", 5);
    rc.set_default("gen.base_channels", 8);
    rc.set_default("disc.base_filters", 8);
    rc.set_default("data.lr_size", 32);
    rc.set_default("train.lr", 1e-3);
}

void common_defaults(RunConfig& rc) {
    rc.set_default("gen.scale", 8);
    rc.set_default("gen.depth", 5);
    rc.set_default("gen.base_channels", 8);
    rc.set_default("gen.use_sab", true);
    rc.set_default("disc.base_filters", 8);
    rc.set_default("data.lr_size", 32);
    rc.set_default("degrade.noise_sigma", 0.0);
    rc.set_default("degrade.seed", 0);
    rc.set_default("degrade.kernel_size", 5);
    rc.set_default("degrade.kernel_sigma", 0.0);  // 0 = scale/4
    rc.set_default("loss.alpha", 0.35);
    rc.set_default("loss.beta", 0.20);
    rc.set_default("loss.gamma", 0.15);
    rc.set_default("loss.eps", 1e-3);
    rc.set_default("train.lr", 1e-4);
    rc.set_default("train.finetune_lr", 1e-5);
    rc.set_default("train.finetune_start", 2000);
    rc.set_default("train.seed", 1);
    rc.set_default("train.ablation", "");
    rc.set_default("features.seed", 2024);
}

DegradationConfig degradation_from(const RunConfig& rc) {
    DegradationConfig cfg;
    cfg.scale = rc.get<int>("gen.scale");
    double sigma = rc.get<double>("degrade.kernel_sigma");
    if (sigma <= 0.0) sigma = cfg.scale / 4.0;
    cfg.blur_kernel = gaussian_kernel(rc.get<int>("degrade.kernel_size"), sigma);
    cfg.noise_sigma = rc.get<double>("degrade.noise_sigma");
    cfg.seed = rc.get<std::uint64_t>("degrade.seed");
    cfg.validate();
    return cfg;
}

TrainConfig train_config_from(const RunConfig& rc) {
    TrainConfig cfg;
    cfg.gen.scale = rc.get<int>("gen.scale");
    cfg.gen.depth = rc.get<int>("gen.depth");
    cfg.gen.base_channels = rc.get<int>("gen.base_channels");
    cfg.gen.use_sab = rc.get<bool>("gen.use_sab");
    cfg.disc.base_filters = rc.get<int>("disc.base_filters");
    cfg.loss.alpha = rc.get<double>("loss.alpha");
    cfg.loss.beta = rc.get<double>("loss.beta");
    cfg.loss.gamma = rc.get<double>("loss.gamma");
    cfg.loss.eps = rc.get<double>("loss.eps");
    std::string abl = rc.get<std::string>("train.ablation");
    if (abl == "no-content")
        cfg.loss.ablate_content = true;
    else if (abl == "no-texture")
        cfg.loss.ablate_texture = true;
    else if (!abl.empty())
        throw ConfigError("unknown ablation '" + abl + "' (no-content|no-texture)");
    cfg.lr = rc.get<double>("train.lr");
    cfg.finetune_lr = rc.get<double>("train.finetune_lr");
    cfg.finetune_start = rc.get<int>("train.finetune_start");
    cfg.seed = rc.get<std::uint64_t>("train.seed");
    cfg.validate();
    return cfg;
}

// HR images center-cropped to lr_size*scale with LR synthesized on the fly.
std::vector<std::pair<ImageTensor, ImageTensor>> load_pairs(const RunConfig& rc,
                                                            const std::string& in_dir,
                                                            std::vector<std::string>* names) {
    int scale = rc.get<int>("gen.scale");
    int crop = rc.get<int>("data.lr_size") * scale;
    DegradationConfig deg = degradation_from(rc);
    DatasetManifest m = build_manifest(in_dir, {}, crop, crop);
    std::vector<std::pair<ImageTensor, ImageTensor>> pairs;
    for (const auto& e : m.entries) {
        ImageTensor hr = center_crop(read_png(m.root + "/" + e.path), crop, crop);
        pairs.push_back({degrade(hr, deg), hr});
        if (names) names->push_back(e.path);
    }
    return pairs;
}

// Architecture from a checkpoint's config record; needed before Trainer::load.
TrainConfig config_from_checkpoint(const std::string& path, const RunConfig& rc) {
    auto recs = load_checkpoint(path);
    for (const auto& r : recs)
        if (r.name == "config") {
            nlohmann::json j =
                nlohmann::json::parse(std::string(r.bytes.begin(), r.bytes.end()));
            if (j.at("scale") != rc.get<int>("gen.scale"))
                throw ConfigError("checkpoint scale " + j.at("scale").dump() +
                                  " does not match configured scale " +
                                  std::to_string(rc.get<int>("gen.scale")));
            TrainConfig cfg = train_config_from(rc);
            cfg.gen.depth = j.at("depth");
            cfg.gen.base_channels = j.at("base_channels");
            cfg.gen.use_sab = j.at("use_sab");
            cfg.disc.base_filters = j.at("disc_filters");
            return cfg;
        }
    throw IoError("checkpoint has no config record: " + path);
}

int cmd_degrade(RunConfig& rc, const std::string& in_dir, const std::string& out_dir) {
    DegradationConfig deg = degradation_from(rc);
    DatasetManifest m = build_manifest(in_dir);
    fs::create_directories(out_dir);
    for (const auto& e : m.entries) {
        ImageTensor hr = read_png(m.root + "/" + e.path);
        ImageTensor lr = degrade(hr, deg);
        fs::path dst = fs::path(out_dir) / e.path;
        fs::create_directories(dst.parent_path());
        write_png(dst.string(), lr);
    }
    save_manifest(m, (fs::path(out_dir) / "manifest.jsonl").string());
    rc.write_resolved((fs::path(out_dir) / "resolved_config.json").string());
    std::cout << "degraded " << m.entries.size() << " images to " << out_dir << "\n";
    return 0;
}

int cmd_train(RunConfig& rc, const std::string& in_dir, const std::string& out_dir, int iters,
              int checkpoint_every) {
    TrainConfig cfg = train_config_from(rc);
    auto pairs = load_pairs(rc, in_dir, nullptr);
    fs::create_directories(out_dir);
    rc.write_resolved((fs::path(out_dir) / "resolved_config.json").string());
    std::ofstream log((fs::path(out_dir) / "train_log.jsonl").string());
    if (!log) throw IoError("cannot write training log in " + out_dir);

    Trainer<float> tr(cfg);
    for (int i = 0; i < iters; ++i) {
        const auto& [lr, hr] = pairs[i % pairs.size()];
        StepStats s = tr.train_step(lr, hr);
        log << s.to_json_line() << "\n";
        if (checkpoint_every > 0 && (i + 1) % checkpoint_every == 0)
            tr.save((fs::path(out_dir) / ("ckpt_" + std::to_string(i + 1) + ".bin")).string());
    }
    tr.save((fs::path(out_dir) / "final.bin").string());
    std::cout << "trained " << iters << " iterations; final checkpoint in " << out_dir << "\n";
    return 0;
}

int cmd_eval(RunConfig& rc, const std::string& in_dir, const std::string& out_dir,
             const std::string& checkpoint, bool maps) {
    std::vector<std::string> names;
    auto pairs = load_pairs(rc, in_dir, &names);
    fs::create_directories(out_dir);
    rc.write_resolved((fs::path(out_dir) / "resolved_config.json").string());

    FeatureExtractor<float> fx({}, rc.get<std::uint64_t>("features.seed"));
    std::unique_ptr<Trainer<float>> model;
    if (!checkpoint.empty()) {
        model = std::make_unique<Trainer<float>>(config_from_checkpoint(checkpoint, rc));
        model->load(checkpoint);
    }

    std::ofstream per((fs::path(out_dir) / "per_image.csv").string());
    if (!per) throw IoError("cannot write per_image.csv in " + out_dir);
    per << "image,method,psnr,ssim,gmsd,lpips\n";
    per.precision(9);
    std::map<std::string, std::map<std::string, std::vector<double>>> agg;  // method->metric
    auto emit = [&](const std::string& name, const std::string& method, const MetricReport& r) {
        per << name << "," << method << "," << r.psnr << "," << r.ssim << "," << r.gmsd << ","
            << r.lpips << "\n";
        agg[method]["psnr"].push_back(r.psnr);
        agg[method]["ssim"].push_back(r.ssim);
        agg[method]["gmsd"].push_back(r.gmsd);
        agg[method]["lpips"].push_back(r.lpips);
    };

    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [lr, hr] = pairs[i];
        ImageTensor bic = resample_bicubic(lr, hr.height, hr.width, /*antialias=*/false);
        emit(names[i], "bicubic", compute_metrics(bic, hr, fx));
        if (model) {
            ImageTensor sr = model->infer(lr);
            emit(names[i], "model", compute_metrics(sr, hr, fx));
            if (maps) {
                std::string stem = fs::path(names[i]).stem().string();
                MetricMap sm = ssim(sr, hr), gm = gmsd(sr, hr);
                write_png((fs::path(out_dir) / (stem + "_ssim_map.png")).string(),
                          false_color(sm.map, 0.0, 1.0));
                write_png((fs::path(out_dir) / (stem + "_gms_map.png")).string(),
                          false_color(gm.map, 0.0, 1.0));
                write_float_grid((fs::path(out_dir) / (stem + "_ssim.f32")).string(), sm.map);
                write_float_grid((fs::path(out_dir) / (stem + "_gms.f32")).string(), gm.map);
            }
        }
    }

    std::ofstream ag((fs::path(out_dir) / "aggregate.csv").string());
    ag << "metric,scale,method,mean,std\n";
    ag.precision(9);
    for (const auto& [method, metrics] : agg)
        for (const auto& [metric, vals] : metrics) {
            SampleSummary s = summarize(vals);
            ag << metric << "," << rc.get<int>("gen.scale") << "," << method << "," << s.mean
               << "," << s.stddev_sample << "\n";
        }
    std::cout << "evaluated " << pairs.size() << " images (" << (model ? 2 : 1)
              << " methods) into " << out_dir << "\n";
    return 0;
}

std::map<std::string, MetricReport> read_per_image_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read csv: " + path);
    std::string line;
    if (!std::getline(f, line) || line.substr(0, 5) != "image")
        throw InputError("csv missing header row: " + path);
    bool has_method = line.find(",method,") != std::string::npos;
    std::map<std::string, MetricReport> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t c = line.find(',', pos);
            if (c == std::string::npos) c = line.size();
            cols.push_back(line.substr(pos, c - pos));
            pos = c + 1;
        }
        if (cols[0] == "mean") continue;
        std::size_t base = has_method ? 2 : 1;
        if (cols.size() < base + 4) throw InputError("malformed csv row in " + path);
        MetricReport r{std::stod(cols[base]), std::stod(cols[base + 1]),
                       std::stod(cols[base + 2]), std::stod(cols[base + 3])};
        out[cols[0]] = r;
    }
    if (out.empty()) throw InputError("csv has no data rows: " + path);
    return out;
}

int cmd_stats(RunConfig& rc, const std::string& csv_a, const std::string& csv_b,
              const std::string& name_a, const std::string& name_b,
              const std::string& out_dir) {
    auto a = read_per_image_csv(csv_a);
    auto b = read_per_image_csv(csv_b);
    std::vector<std::string> missing;
    for (const auto& [id, _] : a)
        if (!b.count(id)) missing.push_back(id + " (only in " + name_a + ")");
    for (const auto& [id, _] : b)
        if (!a.count(id)) missing.push_back(id + " (only in " + name_b + ")");
    if (!missing.empty()) {
        std::string msg = "misaligned image ids:";
        for (const auto& m : missing) msg += " " + m;
        throw InputError(msg);
    }

    fs::create_directories(out_dir);
    rc.write_resolved((fs::path(out_dir) / "resolved_config.json").string());
    nlohmann::json tests = nlohmann::json::array();
    nlohmann::json zsum = nlohmann::json::object();
    const std::string pair_name = name_a + " vs " + name_b;
    auto pick = [](const MetricReport& r, const std::string& m) {
        if (m == "psnr") return r.psnr;
        if (m == "ssim") return r.ssim;
        if (m == "gmsd") return r.gmsd;
        return r.lpips;
    };
    for (const std::string metric : {"psnr", "ssim", "gmsd", "lpips"}) {
        std::vector<double> va, vb;
        for (const auto& [id, ra] : a) {
            va.push_back(pick(ra, metric));
            vb.push_back(pick(b.at(id), metric));
        }
        auto d = metric_diff(va, vb);
        bool all_zero = true;
        for (double v : d) all_zero = all_zero && v == 0.0;
        if (all_zero)
            throw InputError("degenerate sample: all-zero differences for metric '" + metric +
                             "' (comparing a method with itself?)");
        WilcoxonResult w = wilcoxon_signed_rank(d);
        tests.push_back({{"metric", metric},
                         {"pair", pair_name},
                         {"W", w.W},
                         {"n", w.n_effective},
                         {"z", w.z},
                         {"p", w.p_value},
                         {"exact", w.exact}});
        for (const auto& [nm, vals] : {std::pair{name_a, va}, {name_b, vb}}) {
            SampleSummary s = summarize(vals);
            zsum[metric][nm] = {{"mean", s.mean},   {"std", s.stddev_sample},
                                {"min", s.min},     {"q1", s.q1},
                                {"median", s.median}, {"q3", s.q3},
                                {"max", s.max}};
        }
    }
    nlohmann::json out{{"tests", tests}, {"zscore_summary", zsum}};
    std::ofstream f((fs::path(out_dir) / "significance.json").string());
    if (!f) throw IoError("cannot write significance.json in " + out_dir);
    f << out.dump(2) << "\n";
    std::cout << "wrote significance report for " << a.size() << " paired images to " << out_dir
              << "\n";
    return 0;
}

int cmd_sweep(RunConfig& rc, const std::string& in_dir, const std::string& out_dir,
              std::vector<double> alphas, std::vector<double> lrs, int steps) {
    if (alphas.empty()) alphas = {rc.get<double>("loss.alpha")};
    if (lrs.empty()) lrs = {rc.get<double>("train.lr")};
    TrainConfig base = train_config_from(rc);
    auto pairs = load_pairs(rc, in_dir, nullptr);
    auto points = run_sweep<float>(base, pairs, alphas, lrs, steps);
    fs::create_directories(out_dir);
    rc.write_resolved((fs::path(out_dir) / "resolved_config.json").string());
    std::ofstream f((fs::path(out_dir) / "sweep.csv").string());
    if (!f) throw IoError("cannot write sweep.csv in " + out_dir);
    f << "alpha,lr,final_g,final_d,psnr\n";
    f.precision(9);
    for (const auto& p : points)
        f << p.alpha << "," << p.lr << "," << p.final_g << "," << p.final_d << "," << p.psnr
          << "\n";
    std::cout << "swept " << points.size() << " configurations into " << out_dir << "\n";
    return 0;
}

int cmd_inspect(const std::string& checkpoint) {
    auto recs = load_checkpoint(checkpoint);
    std::size_t total = 0;
    for (const auto& r : recs) {
        std::string dtype = r.dtype == CheckpointRecord::kF32    ? "f32"
                            : r.dtype == CheckpointRecord::kU64 ? "u64"
                                                                : "blob";
        std::cout << r.name << "  " << dtype << "  [";
        std::size_t n = 1;
        for (std::size_t i = 0; i < r.dims.size(); ++i) {
            std::cout << (i ? "," : "") << r.dims[i];
            n *= static_cast<std::size_t>(r.dims[i]);
        }
        std::cout << "]\n";
        if (r.dtype == CheckpointRecord::kF32) total += n;
        if (r.name == "config")
            std::cout << "  "
                      << nlohmann::json::parse(std::string(r.bytes.begin(), r.bytes.end()))
                             .dump()
                      << "\n";
    }
    std::cout << recs.size() << " records, " << total << " f32 values\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"endol2h: desk-scale endoscopic super-resolution toolkit"};
    app.require_subcommand(1);

    std::string config_file, preset, in_dir, out_dir, checkpoint;
    std::string csv_a, csv_b, name_a = "A", name_b = "B", ablation;
    int iters = 200, checkpoint_every = 0, steps = 5;
    int scale = 0, depth = 0, base_channels = 0, disc_filters = 0, lr_size = 0;
    double noise = -1.0, lr_rate = 0.0, alpha = -1.0;
    std::uint64_t seed_val = 0;
    bool no_attention = false, maps = false;
    std::vector<double> alphas, lrs;
    bool seed_given = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "JSON config file (flat dotted keys)");
        sub->add_option("--preset", preset, "desk-8x|desk-10x|desk-12x");
        sub->add_option("--scale", scale, "super-resolution factor (8|10|12)");
    };

    auto* deg = app.add_subcommand("degrade", "synthesize an LR image tree from HR inputs");
    add_common(deg);
    deg->add_option("--in", in_dir, "HR input directory")->required();
    deg->add_option("--out", out_dir, "LR output directory")->required();
    deg->add_option("--noise", noise, "Gaussian noise sigma");
    deg->add_option("--seed", seed_val, "degradation noise seed")->each([&](const std::string&) {
        seed_given = true;
    });

    auto* trn = app.add_subcommand("train", "train the GAN on an HR image directory");
    add_common(trn);
    trn->add_option("--in", in_dir, "HR input directory")->required();
    trn->add_option("--out", out_dir, "run output directory")->required();
    trn->add_option("--iters", iters, "training iterations");
    trn->add_option("--checkpoint-every", checkpoint_every, "periodic checkpoint interval");
    trn->add_option("--lr", lr_rate, "learning rate");
    trn->add_option("--alpha", alpha, "adversarial loss weight");
    trn->add_option("--ablation", ablation, "no-content|no-texture");
    trn->add_flag("--no-attention", no_attention, "disable the spatial attention block");
    auto add_arch = [&](CLI::App* sub) {
        sub->add_option("--depth", depth, "generator U-Net depth");
        sub->add_option("--base-channels", base_channels, "generator base channels");
        sub->add_option("--disc-filters", disc_filters, "discriminator base filters");
        sub->add_option("--lr-size", lr_size, "LR training patch size");
    };
    add_arch(trn);
    trn->add_option("--seed", seed_val, "training seed")->each([&](const std::string&) {
        seed_given = true;
    });

    auto* ev = app.add_subcommand("eval", "metric report against the bicubic baseline");
    add_common(ev);
    ev->add_option("--in", in_dir, "HR input directory")->required();
    ev->add_option("--out", out_dir, "report output directory")->required();
    ev->add_option("--checkpoint", checkpoint, "trained model checkpoint");
    ev->add_flag("--maps", maps, "write SSIM/GMS quality maps");
    ev->add_option("--lr-size", lr_size, "LR patch size");

    auto* st = app.add_subcommand("stats", "paired significance tests between two methods");
    add_common(st);
    st->add_option("--a", csv_a, "per-image CSV for method A")->required();
    st->add_option("--b", csv_b, "per-image CSV for method B")->required();
    st->add_option("--name-a", name_a, "label for method A");
    st->add_option("--name-b", name_b, "label for method B");
    st->add_option("--out", out_dir, "report output directory")->required();

    auto* sw = app.add_subcommand("sweep", "grid sweep over loss alpha and learning rate");
    add_common(sw);
    sw->add_option("--in", in_dir, "HR input directory")->required();
    sw->add_option("--out", out_dir, "report output directory")->required();
    sw->add_option("--alphas", alphas, "alpha grid")->delimiter(',');
    sw->add_option("--lrs", lrs, "learning-rate grid")->delimiter(',');
    sw->add_option("--steps", steps, "training steps per grid point");
    add_arch(sw);

    auto* ins = app.add_subcommand("inspect-checkpoint", "list checkpoint records");
    ins->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        RunConfig rc;
        // flags first (highest precedence), then file, then preset, then defaults
        CLI::App* sub = app.get_subcommands().front();
        if (scale) rc.set_flag("gen.scale", scale);
        if (depth) rc.set_flag("gen.depth", depth);
        if (base_channels) rc.set_flag("gen.base_channels", base_channels);
        if (disc_filters) rc.set_flag("disc.base_filters", disc_filters);
        if (lr_size) rc.set_flag("data.lr_size", lr_size);
        if (no_attention) rc.set_flag("gen.use_sab", false);
        if (noise >= 0.0) rc.set_flag("degrade.noise_sigma", noise);
        if (lr_rate > 0.0) rc.set_flag("train.lr", lr_rate);
        if (alpha >= 0.0) rc.set_flag("loss.alpha", alpha);
        if (!ablation.empty()) rc.set_flag("train.ablation", ablation);
        if (seed_given) {
            rc.set_flag("degrade.seed", seed_val);
            rc.set_flag("train.seed", seed_val);
        }
        if (!config_file.empty()) rc.load_file(config_file);
        apply_preset(rc, preset);
        common_defaults(rc);

        if (sub == deg) return cmd_degrade(rc, in_dir, out_dir);
        if (sub == trn) return cmd_train(rc, in_dir, out_dir, iters, checkpoint_every);
        if (sub == ev) return cmd_eval(rc, in_dir, out_dir, checkpoint, maps);
        if (sub == st) return cmd_stats(rc, csv_a, csv_b, name_a, name_b, out_dir);
        if (sub == sw) return cmd_sweep(rc, in_dir, out_dir, alphas, lrs, steps);
        if (sub == ins) return cmd_inspect(checkpoint);
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    }
}
