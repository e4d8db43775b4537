#include "damformer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>

#include "damformer/optim.hpp"

namespace damformer {

Tensor stack_images(const std::vector<SamplePair>& batch, bool post, Dtype dt) {
    const int b = static_cast<int>(batch.size());
    const Tensor& first = post ? batch[0].post : batch[0].pre;
    const int h = first.dim(1), w = first.dim(2);
    Tensor out = Tensor::zeros({b, 3, h, w}, dt);
    const int64_t per = static_cast<int64_t>(3) * h * w;
    for (int i = 0; i < b; ++i) {
        const Tensor& img = post ? batch[static_cast<size_t>(i)].post : batch[static_cast<size_t>(i)].pre;
        if (img.dim(1) != h || img.dim(2) != w)
            throw DataError("batch: sample sizes disagree, " + shape_str(img.shape()) + " vs " +
                            shape_str(first.shape()));
        auto src = img.data<float>();
        detail::dispatch(dt, [&](auto tag) {
            using T = decltype(tag);
            auto dst = out.mutable_data<T>();
            for (int64_t j = 0; j < per; ++j)
                dst[static_cast<size_t>(i * per + j)] = static_cast<T>(src[static_cast<size_t>(j)]);
        });
    }
    return out;
}

IntMask stack_masks(const std::vector<SamplePair>& batch, bool dam) {
    const int b = static_cast<int>(batch.size());
    const IntMask& first = dam ? batch[0].dam : batch[0].loc;
    const int h = first.shape[0], w = first.shape[1];
    IntMask out({b, h, w});
    for (int i = 0; i < b; ++i) {
        const IntMask& m = dam ? batch[static_cast<size_t>(i)].dam : batch[static_cast<size_t>(i)].loc;
        std::copy(m.data.begin(), m.data.end(),
                  out.data.begin() + static_cast<int64_t>(i) * h * w);
    }
    return out;
}

Dataset train_dataset(const RunConfig& run) {
    if (run.data_source == "dir")
        return Dataset::from_dir(std::filesystem::path(run.data_dir) / "train");
    SynthConfig cfg = run.synth;
    cfg.seed = run.seed;
    return Dataset::synth(cfg, run.train_count, 0);
}

Dataset eval_dataset(const RunConfig& run) {
    if (run.data_source == "dir")
        return Dataset::from_dir(std::filesystem::path(run.data_dir) / "eval");
    SynthConfig cfg = run.synth;
    cfg.seed = run.seed;
    const uint64_t offset = run.eval_on_train ? 0 : (uint64_t(1) << 32);
    return Dataset::synth(cfg, run.eval_count, offset);
}

namespace {

// Serves shuffled sample indices across epoch boundaries.
class BatchStream {
  public:
    BatchStream(uint64_t seed, int n) : seed_(seed), n_(n) { refill(); }
    std::vector<int> next(int batch) {
        std::vector<int> out;
        out.reserve(static_cast<size_t>(batch));
        for (int i = 0; i < batch; ++i) {
            if (cursor_ == n_) refill();
            out.push_back(order_[static_cast<size_t>(cursor_++)]);
        }
        return out;
    }

  private:
    void refill() {
        order_ = epoch_order(seed_, epoch_++, n_);
        cursor_ = 0;
    }
    uint64_t seed_;
    int n_;
    uint64_t epoch_ = 0;
    std::vector<int> order_;
    int cursor_ = 0;
};

std::string format_log_line(int step, const LossBreakdown& b) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "step %d total %.6f loc %.6f dam %.6f bce %.6f dice %.6f ce %.6f lovasz %.6f",
                  step, b.total.item(), b.loc, b.dam, b.bce, b.dice, b.ce, b.lovasz);
    return buf;
}

}  // namespace

TrainResult train(const RunConfig& run) {
    run.validate();
    if (run.train_count < 1 && run.data_source == "synth")
        throw ConfigError("train: data.train must be >= 1");
    set_worker_count(run.threads);
    set_debug_check_finite(run.check_finite);

    Dataset data = train_dataset(run);
    if (data.size() < 1) throw DataError("train: empty training set");

    std::filesystem::create_directories(run.out_dir);
    std::ofstream log(std::filesystem::path(run.out_dir) / "train.log");
    {
        std::ofstream cfg(std::filesystem::path(run.out_dir) / "config.txt");
        cfg << run.to_text();
    }

    DamFormer model(run.model, Dtype::f32, run.seed);
    AdamW opt(model.parameters(), run.opt);
    BatchStream stream(run.seed, data.size());

    TrainResult result;
    double last_loss = 0;
    for (int step = 1; step <= run.opt.steps; ++step) {
        std::vector<SamplePair> batch;
        for (int idx : stream.next(run.opt.batch_size)) batch.push_back(data.get(idx));
        Tensor pre = stack_images(batch, false, Dtype::f32);
        Tensor post = stack_images(batch, true, Dtype::f32);
        IntMask loc = stack_masks(batch, false);
        IntMask dam = stack_masks(batch, true);

        auto [loc_logits, dam_logits] = model.forward(pre, post);
        LossBreakdown loss = compound_loss(loc_logits, dam_logits, loc, dam, run.loss);
        GradTape::active().backward(loss.total);
        opt.step();
        opt.zero_grad();
        GradTape::active().reset();

        last_loss = loss.total.item();
        const std::string line = format_log_line(step, loss);
        std::cout << line << "\n";
        log << line << "\n";
        result.steps_run = step;

        if (run.opt.checkpoint_every > 0 && step % run.opt.checkpoint_every == 0) {
            ParamList params = model.parameters();
            save_checkpoint(std::filesystem::path(run.out_dir) /
                                ("ckpt_" + std::to_string(step) + ".dfw"),
                            params);
        }
        if (run.opt.stop_loss > 0 && last_loss < run.opt.stop_loss) {
            const std::string msg =
                "early stop at step " + std::to_string(step) + ": loss below " +
                std::to_string(run.opt.stop_loss);
            std::cout << msg << "\n";
            log << msg << "\n";
            break;
        }
    }

    result.final_loss = last_loss;
    result.checkpoint_path = std::filesystem::path(run.out_dir) / "final.dfw";
    ParamList params = model.parameters();
    save_checkpoint(result.checkpoint_path, params);
    return result;
}

MetricsReport evaluate(const RunConfig& run, const std::filesystem::path& checkpoint) {
    run.validate();
    set_worker_count(run.threads);
    set_debug_check_finite(run.check_finite);

    DamFormer model(run.model, Dtype::f32, run.seed);
    ParamList params = model.parameters();
    load_checkpoint(checkpoint, params);

    Dataset data = eval_dataset(run);
    MetricsReport report;
    NoGradGuard ng;
    for (int i = 0; i < data.size(); ++i) {
        std::vector<SamplePair> batch{data.get(i)};
        auto [loc_logits, dam_logits] =
            model.forward(stack_images(batch, false, Dtype::f32), stack_images(batch, true, Dtype::f32));
        auto [pred_loc, pred_dam] = derive_masks(loc_logits, dam_logits);
        MetricsReport part;
        part.accumulate(pred_loc, pred_dam, stack_masks(batch, false), stack_masks(batch, true));
        report.merge(part);
    }

    std::filesystem::create_directories(run.out_dir);
    std::ofstream out(std::filesystem::path(run.out_dir) / "metrics.txt");
    out << report.key_values() << report.table();
    return report;
}

void predict(const RunConfig& run, const std::filesystem::path& checkpoint,
             const std::filesystem::path& out_dir) {
    run.validate();
    set_worker_count(run.threads);
    DamFormer model(run.model, Dtype::f32, run.seed);
    ParamList params = model.parameters();
    load_checkpoint(checkpoint, params);

    Dataset data = eval_dataset(run);
    std::filesystem::create_directories(out_dir);
    NoGradGuard ng;
    for (int i = 0; i < data.size(); ++i) {
        std::vector<SamplePair> batch{data.get(i)};
        auto [loc_logits, dam_logits] =
            model.forward(stack_images(batch, false, Dtype::f32), stack_images(batch, true, Dtype::f32));
        auto [pred_loc, pred_dam] = derive_masks(loc_logits, dam_logits);
        const int h = pred_loc.shape[1], w = pred_loc.shape[2];
        std::vector<uint8_t> gray(static_cast<size_t>(h) * w);
        for (int64_t p = 0; p < static_cast<int64_t>(gray.size()); ++p)
            gray[static_cast<size_t>(p)] = pred_loc[p] ? 255 : 0;
        IntMask dam2d({h, w});
        std::copy(pred_dam.data.begin(), pred_dam.data.end(), dam2d.data.begin());
        write_pgm(out_dir / (data.id(i) + ".loc.pgm"), w, h, gray);
        write_ppm(out_dir / (data.id(i) + ".dam.ppm"), w, h, render_damage_palette(dam2d));
        std::cout << "predicted " << data.id(i) << "\n";
    }
}

void synth_write(const RunConfig& run, const std::filesystem::path& out_dir) {
    run.validate();
    if (run.data_source != "synth")
        throw ConfigError("synth: data.source must be synth for dataset generation");
    for (const char* split : {"train", "eval"}) {
        Dataset data = std::strcmp(split, "train") == 0 ? train_dataset(run) : eval_dataset(run);
        const std::filesystem::path dir = out_dir / split;
        std::filesystem::create_directories(dir);
        for (int i = 0; i < data.size(); ++i) {
            SamplePair s = data.get(i);
            const std::string base = (dir / data.id(i)).string();
            write_raster(base + ".pre.dfr", tensor_to_raster(s.pre));
            write_raster(base + ".post.dfr", tensor_to_raster(s.post));
            write_raster(base + ".loc.dfr", mask_to_raster(s.loc));
            write_raster(base + ".dam.dfr", mask_to_raster(s.dam));
        }
        std::cout << "wrote " << data.size() << " samples to " << dir.string() << "\n";
    }
}

double gradcheck(const RunConfig& run, int coords_per_param, double h) {
    run.validate();
    set_worker_count(run.threads);

    DamFormer model(run.model, Dtype::f64, run.seed);
    Dataset data = train_dataset(run);
    std::vector<SamplePair> batch{data.get(0)};
    Tensor pre = stack_images(batch, false, Dtype::f64);
    Tensor post = stack_images(batch, true, Dtype::f64);
    IntMask loc = stack_masks(batch, false);
    IntMask dam = stack_masks(batch, true);

    auto loss_fn = [&] {
        auto [loc_logits, dam_logits] = model.forward(pre, post);
        return compound_loss(loc_logits, dam_logits, loc, dam, run.loss).total;
    };

    GradTape::active().reset();
    ParamList params = model.parameters();
    for (NamedParam& p : params) p.tensor.zero_grad();
    Tensor loss = loss_fn();
    GradTape::active().backward(loss);
    std::vector<std::vector<double>> analytic;
    for (NamedParam& p : params) {
        Tensor g = p.tensor.grad();
        std::vector<double> gv(static_cast<size_t>(g.numel()));
        for (int64_t i = 0; i < g.numel(); ++i) gv[static_cast<size_t>(i)] = g.value_at(i);
        analytic.push_back(std::move(gv));
    }
    GradTape::active().reset();

    SplitMix64 coord_rng(run.seed ^ 0x47434845ull);
    double worst = 0;
    std::string worst_param;
    NoGradGuard ng;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor t = params[pi].tensor;
        const int take = static_cast<int>(std::min<int64_t>(coords_per_param, t.numel()));
        for (int s = 0; s < take; ++s) {
            const int64_t i = static_cast<int64_t>(coord_rng.uniform_int(static_cast<uint64_t>(t.numel())));
            const double orig = t.value_at(i);
            t.set_value_at(i, orig + h);
            const double fp = loss_fn().item();
            t.set_value_at(i, orig - h);
            const double fm = loss_fn().item();
            t.set_value_at(i, orig);
            const double numeric = (fp - fm) / (2 * h);
            const double a = analytic[pi][static_cast<size_t>(i)];
            const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-3});
            if (rel > worst) {
                worst = rel;
                worst_param = params[pi].name;
            }
        }
    }
    std::cout << "gradcheck: " << params.size() << " parameter tensors, worst relative error "
              << worst << " (" << worst_param << ")\n";
    return worst;
}

}  // namespace damformer
