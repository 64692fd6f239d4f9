#include "d3t/cli.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "d3t/checkpoint.hpp"
#include "d3t/config.hpp"
#include "d3t/image_io.hpp"
#include "d3t/inversion.hpp"
#include "d3t/rng.hpp"
#include "d3t/runlog.hpp"
#include "d3t/trainer.hpp"

namespace d3t::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<uint64_t> seed;
    std::string out = "out";
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config_path, "configuration file (defaults apply without it)");
    sub->add_option("--set", c.sets, "dotted-path override, key=value (repeatable)");
    sub->add_option("--seed", c.seed, "run seed (overrides transfer.seed)");
    sub->add_option("--out", c.out, "output directory");
}

config::RunConfig resolve_config(const Common& c) {
    config::RunConfig cfg;
    if (!c.config_path.empty()) cfg = config::load_config(c.config_path);
    config::apply_overrides(cfg, c.sets);
    if (c.seed) cfg.transfer.seed = *c.seed;
    cfg.validate();
    return cfg;
}

fs::path prepare_out(const Common& c) {
    fs::path out(c.out);
    fs::create_directories(out);
    return out;
}

void write_run_files(const fs::path& out, const config::RunConfig& cfg,
                     const std::map<std::string, std::string>& hashes) {
    const std::string echo = config::write_config(cfg);
    std::ofstream f(out / "config.txt", std::ios::trunc);
    f << echo;
    if (!f) throw std::runtime_error("cannot write " + (out / "config.txt").string());
    runlog::write_manifest((out / "manifest.json").string(), echo, cfg.transfer.seed, hashes);
}

void done_line(const std::string& command, std::initializer_list<std::pair<const char*, std::string>> kv) {
    json j{{"type", "done"}, {"command", command}};
    for (const auto& [k, v] : kv) j[k] = v;
    std::cout << j.dump() << "\n";
}

std::string require_dir(const std::string& path, const char* key) {
    if (path.empty())
        throw std::runtime_error(std::string("config key '") + key + "' must be set for this command");
    return path;
}

uint64_t ckpt_hash(const backbone::GanSnapshot& s) {
    return backbone::params_hash(s.params);
}

extractor::Extractor make_extractor(const config::RunConfig& cfg) {
    return extractor::Extractor::frozen_random(cfg.metrics.extractor_seed);
}

// -- commands ----------------------------------------------------------------

int cmd_make_toys(const Common& c, int source_n, int target_n) {
    config::RunConfig cfg = resolve_config(c);
    const fs::path out = prepare_out(c);
    data::ToySpec spec;
    spec.resolution = cfg.network.resolution;
    spec.source_count = source_n;
    spec.target_count = target_n;
    data::make_toy_domains(spec, cfg.transfer.seed, out.string());
    write_run_files(out, cfg, {});
    done_line("make-toys", {{"out", out.string()},
                            {"source", (out / "source").string()},
                            {"target", (out / "target").string()}});
    return 0;
}

int cmd_pretrain(const Common& c) {
    config::RunConfig cfg = resolve_config(c);
    const fs::path out = prepare_out(c);
    data::Dataset reals =
        data::ingest_dataset(require_dir(cfg.data.source_dir, "data.source_dir"),
                             cfg.network.resolution);
    backbone::GanSnapshot start =
        backbone::init_snapshot(cfg.network, cfg.transfer.seed, backbone::Role::Source);

    extractor::Extractor ex = make_extractor(cfg);
    std::optional<metrics::GaussianStats> stats;
    runlog::RunLog log((out / "log.jsonl").string());
    const std::string ckpt_path = (out / "source.ckpt").string();

    trainer::TrainCallbacks cb;
    cb.on_step = [&](const trainer::StepRecord& r) { log.step(r); };
    cb.on_snapshot = [&](const backbone::GanSnapshot& s) { ckpt::save_checkpoint(ckpt_path, s); };
    if (cfg.metrics.eval_every > 0) {
        cb.eval_every = cfg.metrics.eval_every;
        cb.evaluate = [&](const backbone::GanSnapshot& s, long step) {
            if (!stats)
                stats = real_stats_cached(reals, ex,
                                          inversion::resolve_cache_root(cfg.data.cache_dir));
            metrics::FIDReport r =
                metrics::evaluate_fid(s, *stats, cfg.metrics.n_fake, ex,
                                      Rng::mix(cfg.transfer.seed, fnv1a64("eval", 4)));
            r.snapshot_step = step;
            log.fid(step, r);
            return r.score;
        };
    }
    backbone::GanSnapshot trained = trainer::pretrain(reals, start, cfg.transfer, cb);
    ckpt::save_checkpoint(ckpt_path, trained);
    write_run_files(out, cfg,
                    {{"dataset", hex64(reals.hash())}, {"checkpoint", hex64(ckpt_hash(trained))}});
    done_line("pretrain", {{"out", out.string()}, {"checkpoint", ckpt_path}});
    return 0;
}

int cmd_invert(const Common& c, const std::string& ckpt_file) {
    config::RunConfig cfg = resolve_config(c);
    const fs::path out = prepare_out(c);
    backbone::GanSnapshot source = ckpt::load_checkpoint(ckpt_file);
    data::Dataset targets =
        data::ingest_dataset(require_dir(cfg.data.target_dir, "data.target_dir"),
                             source.config.resolution);
    extractor::Extractor ex = make_extractor(cfg);
    auto samples = inversion::precompute_transforms(
        targets, source, ex, cfg.inversion, inversion::resolve_cache_root(cfg.data.cache_dir));

    std::ofstream rep(out / "inversions.jsonl", std::ios::trunc);
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        rep << json{{"item", hex64(s.item_hash)},
                    {"name", targets.names[i]},
                    {"final_pixel_loss", s.inversion.final_pixel_loss},
                    {"final_perceptual_loss", s.inversion.final_perceptual_loss}}
                   .dump()
            << "\n";
        char name[32];
        std::snprintf(name, sizeof(name), "recon-%05zu.png", i);
        img::write_png((out / name).string(), s.inversion.reconstruction);
    }
    if (!rep) throw std::runtime_error("cannot write inversion report");
    write_run_files(out, cfg,
                    {{"dataset", hex64(targets.hash())}, {"checkpoint", hex64(ckpt_hash(source))}});
    done_line("invert", {{"out", out.string()},
                         {"count", std::to_string(samples.size())}});
    return 0;
}

int cmd_transfer(const Common& c, const std::string& source_file) {
    config::RunConfig cfg = resolve_config(c);
    const fs::path out = prepare_out(c);
    backbone::GanSnapshot source = ckpt::load_checkpoint(source_file);
    if (source.role != backbone::Role::Source)
        throw std::runtime_error("transfer: checkpoint " + source_file + " is not a source snapshot");
    data::Dataset targets =
        data::ingest_dataset(require_dir(cfg.data.target_dir, "data.target_dir"),
                             source.config.resolution);
    extractor::Extractor ex = make_extractor(cfg);
    const std::string cache_root = inversion::resolve_cache_root(cfg.data.cache_dir);

    std::vector<inversion::TransformedSample> cache;
    if (cfg.transfer.weights.lambda2 > 0.f)
        cache = inversion::precompute_transforms(targets, source, ex, cfg.inversion, cache_root);

    std::optional<metrics::GaussianStats> stats;
    runlog::RunLog log((out / "log.jsonl").string());
    const std::string tgt_path = (out / "target.ckpt").string();

    trainer::TrainCallbacks cb;
    cb.on_step = [&](const trainer::StepRecord& r) { log.step(r); };
    cb.on_snapshot = [&](const backbone::GanSnapshot& s) { ckpt::save_checkpoint(tgt_path, s); };
    if (cfg.metrics.eval_every > 0) {
        cb.eval_every = cfg.metrics.eval_every;
        cb.evaluate = [&](const backbone::GanSnapshot& s, long step) {
            if (!stats) stats = real_stats_cached(targets, ex, cache_root);
            metrics::FIDReport r =
                metrics::evaluate_fid(s, *stats, cfg.metrics.n_fake, ex,
                                      Rng::mix(cfg.transfer.seed, fnv1a64("eval", 4)));
            r.snapshot_step = step;
            log.fid(step, r);
            return r.score;
        };
    }
    trainer::TransferResult res = trainer::transfer(targets, source, cache, cfg.transfer, cb);
    ckpt::save_checkpoint(tgt_path, res.final_snapshot);
    const std::string best_path = (out / "best.ckpt").string();
    ckpt::save_checkpoint(best_path, res.best_snapshot);
    write_run_files(out, cfg,
                    {{"dataset", hex64(targets.hash())},
                     {"source_checkpoint", hex64(ckpt_hash(source))},
                     {"final_checkpoint", hex64(ckpt_hash(res.final_snapshot))},
                     {"best_checkpoint", hex64(ckpt_hash(res.best_snapshot))}});
    done_line("transfer", {{"out", out.string()},
                           {"checkpoint", tgt_path},
                           {"best", best_path},
                           {"best_step", std::to_string(res.best_step)}});
    return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt_file) {
    config::RunConfig cfg = resolve_config(c);
    const fs::path out = prepare_out(c);
    backbone::GanSnapshot snap = ckpt::load_checkpoint(ckpt_file);
    data::Dataset reals =
        data::ingest_dataset(require_dir(cfg.data.target_dir, "data.target_dir"),
                             snap.config.resolution);
    extractor::Extractor ex = make_extractor(cfg);
    metrics::GaussianStats stats =
        real_stats_cached(reals, ex, inversion::resolve_cache_root(cfg.data.cache_dir));
    metrics::FIDReport r = metrics::evaluate_fid(snap, stats, cfg.metrics.n_fake, ex,
                                                 Rng::mix(cfg.transfer.seed, fnv1a64("eval", 4)));
    r.snapshot_step = snap.step;
    runlog::RunLog log((out / "log.jsonl").string());
    log.fid(snap.step, r);
    write_run_files(out, cfg,
                    {{"dataset", hex64(reals.hash())}, {"checkpoint", hex64(ckpt_hash(snap))}});
    std::cout << json{{"type", "fid"},
                      {"score", r.score},
                      {"extractor_id", r.extractor_id},
                      {"n_real", r.n_real},
                      {"n_fake", r.n_fake},
                      {"snapshot_step", r.snapshot_step}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_sample(const Common& c, const std::string& ckpt_file, int n, uint64_t noise_seed) {
    config::RunConfig cfg = resolve_config(c);
    const fs::path out = prepare_out(c);
    if (n <= 0) throw std::runtime_error("sample: --n must be positive");
    backbone::GanSnapshot snap = ckpt::load_checkpoint(ckpt_file);
    backbone::SynthResult sr = backbone::sample_images(snap, n, cfg.transfer.seed, noise_seed);
    int cols = 1;
    while (cols * cols < n) ++cols;
    Tensor grid = img::compose_grid(sr.image, cols);
    const std::string png = (out / "samples.png").string();
    img::write_png(png, grid);
    write_run_files(out, cfg, {{"checkpoint", hex64(ckpt_hash(snap))}});
    done_line("sample", {{"out", out.string()}, {"image", png}});
    return 0;
}

int cmd_interpolate(const Common& c, const std::string& ckpt_file, uint64_t seed_a, uint64_t seed_b,
                    int steps, uint64_t noise_seed) {
    config::RunConfig cfg = resolve_config(c);
    const fs::path out = prepare_out(c);
    if (steps < 2) throw std::runtime_error("interpolate: --steps must be at least 2");
    backbone::GanSnapshot snap = ckpt::load_checkpoint(ckpt_file);
    const int sd = snap.config.style_dim, L = snap.config.layer_count();
    const int r = snap.config.resolution;

    // Endpoint styles use the same per-sample noise streams as sampling, so
    // frame 0 and frame steps-1 reproduce single-sample outputs bit-exactly.
    Tensor za = randn({1, sd}, Rng(Rng::mix(seed_a, 0)));
    Tensor zb = randn({1, sd}, Rng(Rng::mix(seed_b, 0)));
    Tensor wa = backbone::map_noise_t(snap, za);
    Tensor wb = backbone::map_noise_t(snap, zb);

    Tensor strip({steps, 3, r, r});
    const long plane = 3l * r * r;
    for (int k = 0; k < steps; ++k) {
        const float t = static_cast<float>(k) / static_cast<float>(steps - 1);
        Tensor w({1, sd});
        for (int j = 0; j < sd; ++j) w[j] = (1.f - t) * wa[j] + t * wb[j];
        std::vector<Tensor> styles(static_cast<size_t>(L), w);
        backbone::SynthResult sr = backbone::synthesize(snap, styles, noise_seed);
        std::copy_n(sr.image.ptr(), plane, strip.ptr() + static_cast<long>(k) * plane);
    }
    Tensor row = img::compose_grid(strip, steps);
    const std::string png = (out / "interpolation.png").string();
    img::write_png(png, row);
    write_run_files(out, cfg, {{"checkpoint", hex64(ckpt_hash(snap))}});
    done_line("interpolate", {{"out", out.string()}, {"image", png}});
    return 0;
}

int cmd_dump_features(const Common& c, const std::string& ckpt_file, int layer) {
    config::RunConfig cfg = resolve_config(c);
    const fs::path out = prepare_out(c);
    backbone::GanSnapshot snap = ckpt::load_checkpoint(ckpt_file);
    data::Dataset ds =
        data::ingest_dataset(require_dir(cfg.data.target_dir, "data.target_dir"),
                             snap.config.resolution);
    Tensor feats = metrics::discriminator_features(snap, ds.images, layer);
    const std::string path = (out / "features.tsv").string();
    metrics::write_feature_matrix(path, feats,
                                  "checkpoint=" + hex64(ckpt_hash(snap)) + " layer=" +
                                      std::to_string(layer) + " dataset=" + hex64(ds.hash()) +
                                      " rows=" + std::to_string(ds.count()));
    write_run_files(out, cfg,
                    {{"dataset", hex64(ds.hash())}, {"checkpoint", hex64(ckpt_hash(snap))}});
    done_line("dump-features", {{"out", out.string()}, {"matrix", path}});
    return 0;
}

} // namespace

metrics::GaussianStats real_stats_cached(const data::Dataset& ds, const extractor::Extractor& ex,
                                         const std::string& cache_root) {
    const fs::path dir = fs::path(cache_root) / "stats";
    fs::create_directories(dir);
    const fs::path file = dir / (hex64(ds.hash()) + "-" + ex.id + ".bin");

    if (fs::is_regular_file(file)) {
        std::ifstream in(file, std::ios::binary);
        std::string b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto get64 = [&](size_t off) {
            uint64_t v = 0;
            for (int i = 0; i < 8; ++i)
                v |= static_cast<uint64_t>(static_cast<unsigned char>(b[off + i])) << (8 * i);
            return v;
        };
        if (b.size() >= 24) {
            const int d = static_cast<int>(get64(0));
            const long count = static_cast<long>(get64(8));
            const size_t expect = 16 + static_cast<size_t>(d) * 8 + static_cast<size_t>(d) * d * 8 + 8;
            if (d > 0 && b.size() == expect &&
                fnv1a64(b.data(), b.size() - 8) == get64(b.size() - 8)) {
                metrics::GaussianStats s;
                s.d = d;
                s.count = count;
                s.mean.resize(static_cast<size_t>(d));
                s.cov.resize(static_cast<size_t>(d) * d);
                size_t off = 16;
                for (auto& m : s.mean) m = std::bit_cast<double>(get64(off)), off += 8;
                for (auto& cvv : s.cov) cvv = std::bit_cast<double>(get64(off)), off += 8;
                return s;
            }
        }
        std::fprintf(stderr, "warning: stats cache %s is corrupt; recomputing\n",
                     file.string().c_str());
    }

    metrics::GaussianStats s = metrics::gaussian_stats(ex.descriptors(ds.images));
    std::string b;
    auto put64 = [&](uint64_t v) {
        for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put64(static_cast<uint64_t>(s.d));
    put64(static_cast<uint64_t>(s.count));
    for (double m : s.mean) put64(std::bit_cast<uint64_t>(m));
    for (double cv : s.cov) put64(std::bit_cast<uint64_t>(cv));
    put64(fnv1a64(b.data(), b.size()));
    std::ofstream o(file, std::ios::binary | std::ios::trunc);
    o.write(b.data(), static_cast<std::streamsize>(b.size()));
    if (!o) throw std::runtime_error("cannot write stats cache " + file.string());
    return s;
}

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"data-dependent few-shot GAN transfer"};
    app.require_subcommand(1);

    struct {
        Common common;
        std::string ckpt, source;
        int n = 16, steps = 8, layer = 1, source_n = 5000, target_n = 100;
        uint64_t seed_a = 1, seed_b = 2, noise_seed = 0;
    } a;

    CLI::App* c_pre = app.add_subcommand("pretrain", "train a source pair from scratch");
    CLI::App* c_inv = app.add_subcommand("invert", "fit codes for every target image");
    CLI::App* c_tra = app.add_subcommand("transfer", "adapt a source pair to the target set");
    CLI::App* c_eva = app.add_subcommand("eval", "score a checkpoint against a dataset");
    CLI::App* c_sam = app.add_subcommand("sample", "render a grid of generated images");
    CLI::App* c_int = app.add_subcommand("interpolate", "render a style interpolation strip");
    CLI::App* c_toy = app.add_subcommand("make-toys", "render the synthetic domain pair");
    CLI::App* c_dmp = app.add_subcommand("dump-features", "write pooled critic features");

    for (CLI::App* sub : {c_pre, c_inv, c_tra, c_eva, c_sam, c_int, c_toy, c_dmp})
        add_common(sub, a.common);

    c_inv->add_option("--ckpt", a.ckpt, "source checkpoint")->required();
    c_tra->add_option("--source", a.source, "source checkpoint")->required();
    c_eva->add_option("--ckpt", a.ckpt, "checkpoint to score")->required();
    c_sam->add_option("--ckpt", a.ckpt, "checkpoint to sample")->required();
    c_sam->add_option("--n", a.n, "image count");
    c_sam->add_option("--noise-seed", a.noise_seed, "synthesis noise stream");
    c_int->add_option("--ckpt", a.ckpt, "checkpoint to sample")->required();
    c_int->add_option("--seed-a", a.seed_a, "first endpoint seed");
    c_int->add_option("--seed-b", a.seed_b, "second endpoint seed");
    c_int->add_option("--steps", a.steps, "frame count");
    c_int->add_option("--noise-seed", a.noise_seed, "synthesis noise stream");
    c_toy->add_option("--source-n", a.source_n, "source image count");
    c_toy->add_option("--target-n", a.target_n, "target image count");
    c_dmp->add_option("--ckpt", a.ckpt, "checkpoint to probe")->required();
    c_dmp->add_option("--layer", a.layer, "1-based block index");

    std::vector<const char*> argv;
    argv.push_back("d3t");
    for (const auto& s : args) argv.push_back(s.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    try {
        if (sub == c_pre) return cmd_pretrain(a.common);
        if (sub == c_inv) return cmd_invert(a.common, a.ckpt);
        if (sub == c_tra) return cmd_transfer(a.common, a.source);
        if (sub == c_eva) return cmd_eval(a.common, a.ckpt);
        if (sub == c_sam) return cmd_sample(a.common, a.ckpt, a.n, a.noise_seed);
        if (sub == c_int)
            return cmd_interpolate(a.common, a.ckpt, a.seed_a, a.seed_b, a.steps, a.noise_seed);
        if (sub == c_toy) return cmd_make_toys(a.common, a.source_n, a.target_n);
        if (sub == c_dmp) return cmd_dump_features(a.common, a.ckpt, a.layer);
    } catch (const std::exception& e) {
        std::cerr << runlog::error_record(name, e.what()) << "\n";
        return 1;
    }
    return 1;
}

} // namespace d3t::cli
