#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "endol2h/checkpoint.hpp"
#include "endol2h/degrade.hpp"
#include "endol2h/errors.hpp"
#include "endol2h/losses.hpp"
#include "endol2h/metrics.hpp"
#include "endol2h/networks.hpp"

namespace endol2h {

struct TrainConfig {
    GeneratorConfig gen;
    DiscriminatorConfig disc;
    LossConfig loss;
    FeatureExtractorConfig features;
    double lr = 1e-4;
    double finetune_lr = 1e-5;
    int finetune_start = 2000;  // iteration at which the rate drops
    double beta1 = 0.5;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        gen.validate();
        disc.validate();
        loss.validate();
        features.validate();
        if (lr <= 0 || finetune_lr <= 0) throw ConfigError("learning rates must be positive");
        if (finetune_start < 0) throw ConfigError("finetune_start must be >= 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("adam betas must lie in [0,1)");
        if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    }

    double lr_at(int iter) const { return iter < finetune_start ? lr : finetune_lr; }
};

// Adam with bias correction and optional decoupled weight decay. Moments are
// stored in the training scalar type so checkpoints round-trip exactly.
template <typename T>
class Adam {
public:
    std::uint64_t t = 0;

    explicit Adam(const ParamStore<T>& ps) {
        for (const auto& e : ps.params()) {
            m_.push_back(Tensor<T>(e.tensor.shape));
            v_.push_back(Tensor<T>(e.tensor.shape));
        }
    }

    void step(ParamStore<T>& ps, const std::map<std::string, typename Tape<T>::Id>& ids,
              Tape<T>& tape, double lr, const TrainConfig& cfg) {
        ++t;
        double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        auto& params = ps.params();
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto it = ids.find(params[k].name);
            if (it == ids.end())
                throw NumericalError("optimizer: no gradient for " + params[k].name);
            const Tensor<T>& g = tape.grad(it->second);
            Tensor<T>& p = params[k].tensor;
            for (std::size_t i = 0; i < p.size(); ++i) {
                double gi = static_cast<double>(g.data[i]);
                double m = cfg.beta1 * m_[k].data[i] + (1.0 - cfg.beta1) * gi;
                double v = cfg.beta2 * v_[k].data[i] + (1.0 - cfg.beta2) * gi * gi;
                m_[k].data[i] = static_cast<T>(m);
                v_[k].data[i] = static_cast<T>(v);
                double update = (m / c1) / (std::sqrt(v / c2) + cfg.adam_eps) +
                                cfg.weight_decay * static_cast<double>(p.data[i]);
                p.data[i] = static_cast<T>(p.data[i] - lr * update);
            }
        }
    }

    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }

private:
    std::vector<Tensor<T>> m_, v_;
};

struct StepStats {
    int iteration = 0;
    double lr = 0;
    double d_loss = 0;
    double g_total = 0;
    double adv = 0, charbonnier = 0, content = 0, texture = 0;

    std::string to_json_line() const {
        nlohmann::json j{{"iter", iteration},   {"lr", lr},
                         {"d_loss", d_loss},    {"g_total", g_total},
                         {"adv", adv},          {"charbonnier", charbonnier},
                         {"content", content},  {"texture", texture}};
        return j.dump();
    }
};

// Alternating 1:1 GAN training. The discriminator is updated first on the
// detached generator output, then the generator trains against the updated
// discriminator (as in pix2pix).
template <typename T>
class Trainer {
public:
    TrainConfig cfg;
    Generator<T> gen;
    Discriminator<T> disc;
    FeatureExtractor<T> features;
    Rng rng;  // drives dropout; part of the checkpointed state
    int iteration = 0;

    explicit Trainer(TrainConfig c)
        : cfg((c.validate(), c)),
          gen(c.gen, c.seed),
          disc(c.disc, c.seed + 1),
          features(c.features, c.seed + 2),
          rng(c.seed + 3),
          adam_g_(gen.ps),
          adam_d_(disc.ps) {}

    StepStats train_step(const ImageTensor& lr_img, const ImageTensor& hr_img) {
        StepStats s;
        s.iteration = iteration;
        s.lr = cfg.lr_at(iteration);
        ImageTensor cond_img =
            resample_bicubic(lr_img, hr_img.height, hr_img.width, /*antialias=*/false);
        Tensor<T> hrT = to_network<T>(hr_img);
        Tensor<T> condT = to_network<T>(cond_img);

        Tape<T> tg;
        auto x = tg.input(to_network<T>(lr_img));
        auto sr = gen.forward(tg, x, true, rng);

        {
            Tape<T> td;
            auto fake = disc.forward(td, td.input(tg.value(sr)), td.input(condT), true);
            auto real = disc.forward(td, td.input(hrT), td.input(condT), true,
                                     /*reuse_params=*/true);
            auto dl = lsgan_discriminator_loss(td, fake.patch_map, real.patch_map);
            td.backward(dl);
            td.check_finite_grads();
            s.d_loss = static_cast<double>(td.value(dl).data[0]);
            adam_d_.step(disc.ps, disc.param_ids, td, s.lr, cfg);
        }

        auto dout = disc.forward(tg, sr, tg.input(condT), true);
        auto gl = generator_loss(tg, sr, tg.input(hrT), dout.patch_map, features, cfg.loss);
        tg.backward(gl.total);
        tg.check_finite_grads();
        s.g_total = static_cast<double>(tg.value(gl.total).data[0]);
        s.adv = gl.adv;
        s.charbonnier = gl.charbonnier;
        s.content = gl.content;
        s.texture = gl.texture;
        adam_g_.step(gen.ps, gen.param_ids, tg, s.lr, cfg);

        ++iteration;
        return s;
    }

    ImageTensor infer(const ImageTensor& lr_img) {
        Tape<T> t;
        Rng eval_rng(0);  // unused: no dropout in eval mode
        auto y = gen.forward(t, t.input(to_network<T>(lr_img)), false, eval_rng);
        return from_network(t.value(y));
    }

    void save(const std::string& path) const {
        std::vector<CheckpointRecord> recs;
        nlohmann::json j{{"scale", cfg.gen.scale},
                         {"depth", cfg.gen.depth},
                         {"base_channels", cfg.gen.base_channels},
                         {"use_sab", cfg.gen.use_sab},
                         {"disc_filters", cfg.disc.base_filters},
                         {"iteration", iteration}};
        std::string js = j.dump();
        recs.push_back(
            CheckpointRecord::from_blob("config", {js.begin(), js.end()}));
        recs.push_back(CheckpointRecord::from_u64("iter", static_cast<std::uint64_t>(iteration)));
        std::string rs = rng.save_state();
        recs.push_back(CheckpointRecord::from_blob("rng", {rs.begin(), rs.end()}));
        append_store_records(recs, "gen", gen.ps);
        append_store_records(recs, "disc", disc.ps);
        append_moments(recs, "adam_g", adam_g_, gen.ps);
        append_moments(recs, "adam_d", adam_d_, disc.ps);
        recs.push_back(CheckpointRecord::from_u64("adam_g.t", adam_g_.t));
        recs.push_back(CheckpointRecord::from_u64("adam_d.t", adam_d_.t));
        save_checkpoint(path, recs);
    }

    void load(const std::string& path) {
        auto recs = load_checkpoint(path);
        auto find = [&](const std::string& name) -> const CheckpointRecord& {
            for (const auto& r : recs)
                if (r.name == name) return r;
            throw IoError("checkpoint is missing record '" + name + "'");
        };
        const auto& cj = find("config");
        nlohmann::json j =
            nlohmann::json::parse(std::string(cj.bytes.begin(), cj.bytes.end()));
        if (j.at("scale") != cfg.gen.scale || j.at("depth") != cfg.gen.depth ||
            j.at("base_channels") != cfg.gen.base_channels ||
            j.at("disc_filters") != cfg.disc.base_filters)
            throw ConfigError("checkpoint architecture does not match the configured model");
        restore_store(recs, "gen", gen.ps);
        restore_store(recs, "disc", disc.ps);
        restore_moments(recs, "adam_g", adam_g_, gen.ps);
        restore_moments(recs, "adam_d", adam_d_, disc.ps);
        adam_g_.t = find("adam_g.t").to_u64();
        adam_d_.t = find("adam_d.t").to_u64();
        iteration = static_cast<int>(find("iter").to_u64());
        const auto& rr = find("rng");
        rng.load_state(std::string(rr.bytes.begin(), rr.bytes.end()));
    }

    Adam<T>& adam_g() { return adam_g_; }
    Adam<T>& adam_d() { return adam_d_; }

private:
    Adam<T> adam_g_, adam_d_;

    static void append_moments(std::vector<CheckpointRecord>& recs, const std::string& prefix,
                               const Adam<T>& opt, const ParamStore<T>& ps) {
        auto& m = const_cast<Adam<T>&>(opt).first_moments();
        auto& v = const_cast<Adam<T>&>(opt).second_moments();
        for (std::size_t k = 0; k < ps.params().size(); ++k) {
            recs.push_back(
                CheckpointRecord::from_tensor(prefix + ".m." + ps.params()[k].name, m[k]));
            recs.push_back(
                CheckpointRecord::from_tensor(prefix + ".v." + ps.params()[k].name, v[k]));
        }
    }

    static void restore_moments(const std::vector<CheckpointRecord>& recs,
                                const std::string& prefix, Adam<T>& opt, const ParamStore<T>& ps) {
        auto find = [&](const std::string& name) -> const CheckpointRecord& {
            for (const auto& r : recs)
                if (r.name == name) return r;
            throw IoError("checkpoint is missing record '" + name + "'");
        };
        for (std::size_t k = 0; k < ps.params().size(); ++k) {
            const std::string& nm = ps.params()[k].name;
            opt.first_moments()[k] = find(prefix + ".m." + nm).template to_tensor<T>();
            opt.second_moments()[k] = find(prefix + ".v." + nm).template to_tensor<T>();
        }
    }
};

struct SweepPoint {
    double alpha = 0;
    double lr = 0;
    double final_g = 0;
    double final_d = 0;
    double psnr = 0;
};

// Grid sweep over (alpha, lr); each point trains a fresh model for a few
// steps on the given pairs (cycled) and reports final losses plus PSNR on
// the first pair.
template <typename T>
std::vector<SweepPoint> run_sweep(const TrainConfig& base,
                                  const std::vector<std::pair<ImageTensor, ImageTensor>>& pairs,
                                  const std::vector<double>& alphas,
                                  const std::vector<double>& lrs, int steps) {
    if (pairs.empty()) throw InputError("sweep: no training pairs");
    if (steps < 1) throw ConfigError("sweep: steps must be >= 1");
    std::vector<SweepPoint> out;
    for (double a : alphas)
        for (double lr : lrs) {
            TrainConfig cfg = base;
            cfg.loss.alpha = a;
            cfg.lr = lr;
            Trainer<T> tr(cfg);
            StepStats last;
            for (int i = 0; i < steps; ++i)
                last = tr.train_step(pairs[i % pairs.size()].first,
                                     pairs[i % pairs.size()].second);
            ImageTensor sr = tr.infer(pairs[0].first);
            out.push_back({a, lr, last.g_total, last.d_loss, psnr(sr, pairs[0].second)});
        }
    return out;
}

}  // namespace endol2h
