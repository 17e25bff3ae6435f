#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "endol2h/checkpoint.hpp"
#include "endol2h/image.hpp"
#include "endol2h/rng.hpp"

using namespace endol2h;
namespace fs = std::filesystem;

namespace {

const std::string kCli = EL2H_CLI_PATH;

int run(const std::string& args) {
    std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

fs::path workdir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "el2h_cli_test";
        fs::remove_all(d);
        fs::create_directories(d / "in" / "colon");
        Rng rng(77);
        for (int k = 0; k < 3; ++k) {
            ImageTensor img(96, 96, 3);
            double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
            for (int y = 0; y < 96; ++y)
                for (int x = 0; x < 96; ++x)
                    for (int c = 0; c < 3; ++c)
                        img.at(y, x, c) = 0.5 + 0.4 * std::sin(fx * x * 6.283 / 96 + c) *
                                                    std::cos(fy * y * 6.283 / 96);
            write_png((d / "in" / "colon" / ("img" + std::to_string(k) + ".png")).string(),
                      clamp01(img));
        }
        return d;
    }();
    return dir;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

const std::string kTiny = " --lr-size 8 --depth 3 --base-channels 2 --disc-filters 2 ";

}  // namespace

TEST_CASE("degrade mirrors the tree and is reproducible by seed") {
    fs::path d = workdir();
    std::string in = (d / "in").string();
    fs::path out = d / "lr";
    REQUIRE(run("degrade --in " + in + " --out " + out.string() + " --scale 8 --seed 7") == 0);
    for (int k = 0; k < 3; ++k)
        CHECK(fs::exists(out / "colon" / ("img" + std::to_string(k) + ".png")));
    CHECK(fs::exists(out / "manifest.jsonl"));
    CHECK(fs::exists(out / "resolved_config.json"));
    ImageTensor lr = read_png((out / "colon" / "img0.png").string());
    CHECK(lr.height == 12);  // 96 / 8
    CHECK(lr.width == 12);

    auto first = slurp(out / "colon" / "img1.png");
    fs::path out2 = d / "lr2";
    REQUIRE(run("degrade --in " + in + " --out " + out2.string() + " --scale 8 --seed 7") == 0);
    CHECK(slurp(out2 / "colon" / "img1.png") == first);
}

TEST_CASE("degrade handles the 12x scale contract") {
    fs::path d = workdir();
    fs::create_directories(d / "big" / "colon");
    ImageTensor img(1020, 1020, 3);
    for (int y = 0; y < 1020; ++y)
        for (int x = 0; x < 1020; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = ((x + y + c) % 17) / 16.0;
    write_png((d / "big" / "colon" / "big.png").string(), img);
    fs::path out = d / "lr12";
    REQUIRE(run("degrade --in " + (d / "big").string() + " --out " + out.string() +
                " --scale 12") == 0);
    ImageTensor lr = read_png((out / "colon" / "big.png").string());
    CHECK(lr.height == 85);
    CHECK(lr.width == 85);
}

TEST_CASE("resolved config round trips through --config with provenance") {
    fs::path d = workdir();
    fs::path out = d / "lr";  // written by the degrade test (same binary defaults otherwise)
    REQUIRE(run("degrade --in " + (d / "in").string() + " --out " + out.string() +
                " --scale 8 --seed 7") == 0);
    auto j = nlohmann::json::parse(std::ifstream((out / "resolved_config.json").string()));
    CHECK(j.at("values").at("gen.scale") == 8);
    CHECK(j.at("provenance").at("gen.scale") == "flag");
    CHECK(j.at("provenance").at("loss.alpha") == "default");

    fs::path out3 = d / "lr3";
    REQUIRE(run("degrade --in " + (d / "in").string() + " --out " + out3.string() + " --config " +
                (out / "resolved_config.json").string()) == 0);
    CHECK(slurp(out3 / "colon" / "img0.png") == slurp(out / "colon" / "img0.png"));
    auto j3 = nlohmann::json::parse(std::ifstream((out3 / "resolved_config.json").string()));
    CHECK(j3.at("provenance").at("gen.scale") == "file");
}

TEST_CASE("train writes checkpoints and a json-lines log") {
    fs::path d = workdir();
    fs::path out = d / "run";
    REQUIRE(run("train --in " + (d / "in").string() + " --out " + out.string() +
                " --preset desk-8x" + kTiny + "--iters 3 --checkpoint-every 2 --seed 5") == 0);
    CHECK(fs::exists(out / "ckpt_2.bin"));
    CHECK(fs::exists(out / "final.bin"));
    auto log = lines_of(out / "train_log.jsonl");
    REQUIRE(log.size() == 3);
    for (const auto& line : log) {
        auto j = nlohmann::json::parse(line);
        CHECK(j.at("g_total").get<double>() > 0.0);
        CHECK(j.at("charbonnier").get<double>() > 0.0);
    }
}

TEST_CASE("ablation no-content zeroes the content term in the log") {
    fs::path d = workdir();
    fs::path out = d / "run_nc";
    REQUIRE(run("train --in " + (d / "in").string() + " --out " + out.string() +
                " --preset desk-8x" + kTiny + "--iters 2 --ablation no-content") == 0);
    for (const auto& line : lines_of(out / "train_log.jsonl")) {
        auto j = nlohmann::json::parse(line);
        CHECK(j.at("content").get<double>() == 0.0);
        CHECK(j.at("texture").get<double>() > 0.0);
    }
}

TEST_CASE("--no-attention checkpoints contain no sab tensors") {
    fs::path d = workdir();
    fs::path out = d / "run_na";
    REQUIRE(run("train --in " + (d / "in").string() + " --out " + out.string() +
                " --preset desk-8x" + kTiny + "--iters 1 --no-attention") == 0);
    for (const auto& r : load_checkpoint((out / "final.bin").string()))
        CHECK(r.name.find("sab") == std::string::npos);
}

TEST_CASE("eval reports bicubic alone and model plus bicubic with a checkpoint") {
    fs::path d = workdir();
    fs::path run_dir = d / "run_eval";
    REQUIRE(run("train --in " + (d / "in").string() + " --out " + run_dir.string() +
                " --preset desk-8x" + kTiny + "--iters 1") == 0);

    fs::path ev0 = d / "ev_base";
    REQUIRE(run("eval --in " + (d / "in").string() + " --out " + ev0.string() + " --lr-size 8") ==
            0);
    auto base_rows = lines_of(ev0 / "per_image.csv");
    REQUIRE(base_rows.size() == 4);  // header + 3 bicubic rows
    for (std::size_t i = 1; i < base_rows.size(); ++i)
        CHECK(base_rows[i].find(",bicubic,") != std::string::npos);

    fs::path ev1 = d / "ev_model";
    REQUIRE(run("eval --in " + (d / "in").string() + " --out " + ev1.string() +
                " --lr-size 8 --checkpoint " + (run_dir / "final.bin").string() + " --maps") == 0);
    auto rows = lines_of(ev1 / "per_image.csv");
    CHECK(rows.size() == 7);  // header + 3 images x 2 methods
    CHECK(fs::exists(ev1 / "img0_ssim_map.png"));
    CHECK(fs::exists(ev1 / "img0_gms.f32"));

    // aggregate mean matches the per-image rows
    double sum = 0;
    int n = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].find(",bicubic,") == std::string::npos) continue;
        std::stringstream ss(rows[i].substr(rows[i].find(",bicubic,") + 9));
        double v;
        ss >> v;
        sum += v;
        ++n;
    }
    bool found = false;
    for (const auto& line : lines_of(ev1 / "aggregate.csv")) {
        if (line.rfind("psnr,8,bicubic,", 0) != 0) continue;
        std::stringstream ss(line.substr(15));
        double mean;
        ss >> mean;
        CHECK(mean == doctest::Approx(sum / n).epsilon(1e-6));
        found = true;
    }
    CHECK(found);
}

TEST_CASE("eval rejects a checkpoint trained at a different scale") {
    fs::path d = workdir();
    fs::path run_dir = d / "run_eval";  // trained at scale 8 above
    REQUIRE(fs::exists(run_dir / "final.bin"));
    CHECK(run("eval --in " + (d / "in").string() + " --out " + (d / "ev_bad").string() +
              " --scale 12 --lr-size 8 --checkpoint " + (run_dir / "final.bin").string()) == 1);
}

TEST_CASE("stats reproduces the small-sample wilcoxon example") {
    fs::path d = workdir();
    auto write_csv = [&](const std::string& name, const double* psnr) {
        std::ofstream f((d / name).string());
        f << "image,method,psnr,ssim,gmsd,lpips\n";
        for (int i = 0; i < 5; ++i)
            f << "img" << i << ".png,m," << psnr[i] << "," << 0.9 + 0.01 * i * (psnr[i] > 30)
              << "," << 0.1 - 0.001 * i * (psnr[i] > 30) << "," << 0.2 - 0.002 * i * (psnr[i] > 30)
              << "\n";
    };
    double a[5] = {31, 32, 33, 34, 35}, b[5] = {30, 30, 30, 30, 30};
    write_csv("a.csv", a);
    write_csv("b.csv", b);
    fs::path out = d / "stat";
    REQUIRE(run("stats --a " + (d / "a.csv").string() + " --b " + (d / "b.csv").string() +
                " --name-a model --name-b bicubic --out " + out.string()) == 0);
    auto j = nlohmann::json::parse(std::ifstream((out / "significance.json").string()));
    bool saw_psnr = false;
    for (const auto& t : j.at("tests")) {
        CHECK(t.at("pair") == "model vs bicubic");
        CHECK(t.at("exact") == true);
        if (t.at("metric") == "psnr") {
            CHECK(t.at("W").get<double>() == 15.0);
            CHECK(t.at("n") == 5);
            CHECK(t.at("z").get<double>() == doctest::Approx(2.0226).epsilon(1e-3));
            CHECK(t.at("p").get<double>() == doctest::Approx(2.0 / 32.0));
            saw_psnr = true;
        }
    }
    CHECK(saw_psnr);
    CHECK(j.at("zscore_summary").at("psnr").at("model").at("median").get<double>() == 33.0);
}

TEST_CASE("stats rejects misaligned and degenerate inputs") {
    fs::path d = workdir();
    {
        std::ofstream f((d / "c.csv").string());
        f << "image,method,psnr,ssim,gmsd,lpips\n";
        f << "other.png,m,30,0.9,0.1,0.2\n";
    }
    CHECK(run("stats --a " + (d / "a.csv").string() + " --b " + (d / "c.csv").string() +
              " --out " + (d / "stat_bad").string()) == 1);
    CHECK(run("stats --a " + (d / "a.csv").string() + " --b " + (d / "a.csv").string() +
              " --out " + (d / "stat_self").string()) == 1);
}

TEST_CASE("sweep writes one csv row per grid point") {
    fs::path d = workdir();
    fs::path out = d / "sw";
    REQUIRE(run("sweep --in " + (d / "in").string() + " --out " + out.string() +
                " --preset desk-8x" + kTiny + "--alphas 0.1,0.35 --lrs 0.001 --steps 2") == 0);
    auto rows = lines_of(out / "sweep.csv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "alpha,lr,final_g,final_d,psnr");
    CHECK(rows[1].rfind("0.1,", 0) == 0);
    CHECK(rows[2].rfind("0.35,", 0) == 0);
}

TEST_CASE("inspect-checkpoint lists records and the architecture") {
    fs::path d = workdir();
    REQUIRE(fs::exists(d / "run_eval" / "final.bin"));
    std::string cmd = kCli + " inspect-checkpoint --checkpoint " +
                      (d / "run_eval" / "final.bin").string() + " > " +
                      (d / "inspect.txt").string() + " 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    auto rows = lines_of(d / "inspect.txt");
    bool saw_config = false, saw_weight = false;
    for (const auto& r : rows) {
        if (r.find("\"scale\":8") != std::string::npos) saw_config = true;
        if (r.rfind("gen.param.enc0.w", 0) == 0) saw_weight = true;
    }
    CHECK(saw_config);
    CHECK(saw_weight);
    CHECK(rows.back().find("f32 values") != std::string::npos);
}

TEST_CASE("error exit codes distinguish input, numerical, and io failures") {
    fs::path d = workdir();
    CHECK(run("degrade --in " + (d / "nope").string() + " --out " + (d / "x").string() +
              " --scale 8") == 1);
    CHECK(run("train --in " + (d / "in").string() + " --out " + (d / "x").string() +
              " --preset desk-9x") == 1);
    CHECK(run("train --in " + (d / "in").string() + " --out " + (d / "x").string() +
              " --ablation no-everything") == 1);
    CHECK(run("inspect-checkpoint --checkpoint " + (d / "nope.bin").string()) == 3);
    CHECK(run("degrade --in " + (d / "in").string() + " --out " + (d / "x2").string() +
              " --config " + (d / "nope.json").string()) == 3);
}
