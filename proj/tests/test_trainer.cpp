#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "endol2h/trainer.hpp"

using namespace endol2h;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.gen.scale = 8;
    cfg.gen.depth = 2;
    cfg.gen.base_channels = 2;
    cfg.disc.base_filters = 2;
    cfg.features.widths = {4};
    cfg.features.content_tap = 0;
    cfg.features.texture_tap = 0;
    cfg.seed = 11;
    return cfg;
}

ImageTensor smooth_image(int h, int w, std::uint64_t seed) {
    ImageTensor img(h, w, 3);
    Rng rng(seed);
    double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) =
                    0.5 + 0.4 * std::sin(fx * x * 6.283 / w + c) * std::cos(fy * y * 6.283 / h);
    return clamp01(img);
}

bool same_params(ParamStore<float>& a, ParamStore<float>& b) {
    for (std::size_t k = 0; k < a.params().size(); ++k)
        if (a.params()[k].tensor.data != b.params()[k].tensor.data) return false;
    for (std::size_t k = 0; k < a.buffers().size(); ++k)
        if (a.buffers()[k].tensor.data != b.buffers()[k].tensor.data) return false;
    return true;
}

}  // namespace

TEST_CASE("checkpoint records round trip exactly") {
    auto path = (fs::temp_directory_path() / "el2h_ckpt_rt.bin").string();
    Tensor<float> t({2, 3});
    Rng rng(5);
    for (float& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    std::vector<CheckpointRecord> recs;
    recs.push_back(CheckpointRecord::from_tensor("w", t));
    recs.push_back(CheckpointRecord::from_blob("state", {1, 2, 3, 255}));
    recs.push_back(CheckpointRecord::from_u64("iter", 123456789ull));
    save_checkpoint(path, recs);

    auto back = load_checkpoint(path);
    REQUIRE(back.size() == 3);
    CHECK(back[0].to_tensor<float>().data == t.data);
    CHECK(back[1].bytes == std::vector<unsigned char>{1, 2, 3, 255});
    CHECK(back[2].to_u64() == 123456789ull);
    fs::remove(path);
}

TEST_CASE("checkpoint loader rejects corrupt files") {
    auto path = (fs::temp_directory_path() / "el2h_ckpt_bad.bin").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTCKPT";
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"), IoError);

    // valid header, truncated payload
    std::vector<CheckpointRecord> recs{CheckpointRecord::from_tensor("w", Tensor<float>({8}))};
    save_checkpoint(path, recs);
    auto size = fs::file_size(path);
    fs::resize_file(path, size - 10);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), IoError);

    // future version
    save_checkpoint(path, recs);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(5);
        char v = 9;
        f.write(&v, 1);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), IoError);
    CHECK_THROWS_AS(load_checkpoint((fs::temp_directory_path() / "nope.bin").string()), IoError);
    fs::remove(path);
}

TEST_CASE("restore_store validates shapes") {
    ParamStore<float> a(1), b(2);
    a.create_param("w", {2, 2}, 0.1);
    b.create_param("w", {3, 3}, 0.1);
    std::vector<CheckpointRecord> recs;
    append_store_records(recs, "m", a);
    CHECK_THROWS_WITH_AS(restore_store(recs, "m", b), doctest::Contains("shape mismatch"),
                         IoError);
    ParamStore<float> c(3);
    c.create_param("other", {2, 2}, 0.1);
    CHECK_THROWS_WITH_AS(restore_store(recs, "m", c), doctest::Contains("missing"), IoError);
}

TEST_CASE("learning rate schedule switches to the finetune rate") {
    TrainConfig cfg = small_config();
    cfg.lr = 1e-4;
    cfg.finetune_lr = 1e-5;
    cfg.finetune_start = 2000;
    CHECK(cfg.lr_at(0) == 1e-4);
    CHECK(cfg.lr_at(1999) == 1e-4);
    CHECK(cfg.lr_at(2000) == 1e-5);
}

TEST_CASE("train config validation") {
    TrainConfig cfg = small_config();
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.beta1 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("training reduces the reconstruction loss on a single pair") {
    TrainConfig cfg = small_config();
    cfg.lr = 2e-3;
    Trainer<float> tr(cfg);
    ImageTensor hr = smooth_image(64, 64, 1);
    ImageTensor lr = degrade(hr, DegradationConfig::for_scale(8));
    double first = 0, last = 0;
    for (int i = 0; i < 60; ++i) {
        StepStats s = tr.train_step(lr, hr);
        if (i == 0) first = s.charbonnier;
        last = s.charbonnier;
        CHECK(std::isfinite(s.g_total));
        CHECK(std::isfinite(s.d_loss));
    }
    CHECK(last < first);
    CHECK(tr.iteration == 60);
}

TEST_CASE("training is deterministic for a fixed seed") {
    ImageTensor hr = smooth_image(32, 32, 2);
    ImageTensor lr = degrade(hr, DegradationConfig::for_scale(8));
    auto run = [&] {
        Trainer<float> tr(small_config());
        for (int i = 0; i < 5; ++i) tr.train_step(lr, hr);
        return tr;
    };
    Trainer<float> a = run(), b = run();
    CHECK(same_params(a.gen.ps, b.gen.ps));
    CHECK(same_params(a.disc.ps, b.disc.ps));
}

TEST_CASE("checkpoint resume is bit-identical to uninterrupted training") {
    auto path = (fs::temp_directory_path() / "el2h_resume.bin").string();
    ImageTensor hr = smooth_image(32, 32, 3);
    ImageTensor lr = degrade(hr, DegradationConfig::for_scale(8));

    Trainer<float> straight(small_config());
    for (int i = 0; i < 10; ++i) straight.train_step(lr, hr);

    Trainer<float> half(small_config());
    for (int i = 0; i < 5; ++i) half.train_step(lr, hr);
    half.save(path);

    Trainer<float> resumed(small_config());
    resumed.load(path);
    CHECK(resumed.iteration == 5);
    for (int i = 0; i < 5; ++i) resumed.train_step(lr, hr);

    CHECK(same_params(straight.gen.ps, resumed.gen.ps));
    CHECK(same_params(straight.disc.ps, resumed.disc.ps));
    CHECK(straight.rng == resumed.rng);
    fs::remove(path);
}

TEST_CASE("loading a checkpoint into a mismatched architecture fails") {
    auto path = (fs::temp_directory_path() / "el2h_mismatch.bin").string();
    Trainer<float> tr(small_config());
    tr.save(path);
    TrainConfig other = small_config();
    other.gen.depth = 3;
    Trainer<float> tr2(other);
    CHECK_THROWS_WITH_AS(tr2.load(path), doctest::Contains("architecture"), ConfigError);
    fs::remove(path);
}

TEST_CASE("step stats serialize to json lines") {
    StepStats s;
    s.iteration = 3;
    s.lr = 1e-4;
    s.g_total = 0.5;
    auto j = nlohmann::json::parse(s.to_json_line());
    CHECK(j.at("iter") == 3);
    CHECK(j.at("g_total") == doctest::Approx(0.5));
}

TEST_CASE("sweep covers the grid and reports metrics") {
    ImageTensor hr = smooth_image(32, 32, 4);
    ImageTensor lr = degrade(hr, DegradationConfig::for_scale(8));
    auto points = run_sweep<float>(small_config(), {{lr, hr}}, {0.1, 0.35}, {1e-3}, 3);
    REQUIRE(points.size() == 2);
    CHECK(points[0].alpha == 0.1);
    CHECK(points[1].alpha == 0.35);
    for (const auto& p : points) {
        CHECK(p.lr == 1e-3);
        CHECK(std::isfinite(p.final_g));
        CHECK(p.psnr > 0.0);
    }
    CHECK_THROWS_AS(run_sweep<float>(small_config(), {}, {0.1}, {1e-3}, 3), InputError);
}
