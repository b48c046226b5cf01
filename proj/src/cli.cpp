#include "pcdiff/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pcdiff/curves.hpp"
#include "pcdiff/diffusion.hpp"
#include "pcdiff/io.hpp"
#include "pcdiff/metrics.hpp"
#include "pcdiff/model.hpp"
#include "pcdiff/spectral.hpp"

namespace pcd::cli {

namespace {

model::ModelConfig model_config_from(const io::RunConfig& rc) {
    model::ModelConfig cfg;
    cfg.n_points = rc.n;
    cfg.latent_points = rc.m;
    cfg.latent_dim = rc.d;
    cfg.depth = rc.depth;
    cfg.curve1 = curves::parse_curve_kind(rc.curve1);
    cfg.curve2 = curves::parse_curve_kind(rc.curve2);
    cfg.voxel_res = rc.l;
    cfg.tau = rc.tau;
    cfg.zeta = rc.zeta;
    cfg.knn_k = rc.k;
    cfg.timesteps = rc.t;
    return cfg;
}

int cmd_train(const std::string& config_path, const std::string& shape_override,
              const std::string& out_path, std::size_t count, const std::string& loss_csv,
              bool verbose) {
    io::RunConfig rc = io::load_run_config(config_path);
    if (!shape_override.empty()) rc.shape = shape_override;
    const model::ModelConfig cfg = model_config_from(rc);
    cfg.validate();

    const auto dataset_pc = io::synth_dataset(io::parse_shape_kind(rc.shape), count, rc.n, rc.seed);
    std::vector<diffusion::Cloud> dataset;
    for (const auto& pc : dataset_pc) dataset.push_back(pc.coords);

    model::PointDiffusionModel mdl(cfg, rc.seed + 1);
    const diffusion::NoiseSchedule schedule = diffusion::default_schedule(rc.t);
    diffusion::TrainOptions opts;
    opts.epochs = rc.epochs;
    opts.batch = rc.batch;
    opts.lr = rc.lr;
    opts.seed = rc.seed + 2;
    opts.verbose = verbose;
    opts.checkpoint_every = std::max<std::size_t>(1, rc.epochs / 4);
    opts.checkpoint_path = out_path;
    const diffusion::TrainResult result = diffusion::train(mdl, dataset, schedule, opts);

    mdl.save(out_path);
    std::ofstream csv(loss_csv);
    if (!csv) throw std::runtime_error("train: cannot write '" + loss_csv + "'");
    csv << "epoch,mean_loss\n";
    csv.precision(10);
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
        csv << (e + 1) << "," << result.epoch_loss[e] << "\n";
    }
    std::printf("trained %zu epochs; checkpoint: %s; loss curve: %s\n", rc.epochs, out_path.c_str(),
                loss_csv.c_str());
    return 0;
}

int cmd_sample(const std::string& model_path, std::size_t count, std::uint64_t seed,
               const std::string& out_dir, bool as_ply) {
    model::PointDiffusionModel mdl = model::PointDiffusionModel::load(model_path);
    const auto& cfg = mdl.config();
    const diffusion::NoiseSchedule schedule = diffusion::default_schedule(cfg.timesteps);
    std::filesystem::create_directories(out_dir);
    for (std::size_t i = 0; i < count; ++i) {
        const diffusion::Cloud cloud = diffusion::sample(mdl, cfg.n_points, schedule, seed + i);
        geom::PointCloud pc;
        pc.coords = cloud;
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%04zu.%s", i, as_ply ? "ply" : "xyz");
        const std::string path = (std::filesystem::path(out_dir) / name).string();
        if (as_ply) {
            io::write_ply(pc, path);
        } else {
            io::write_xyz(pc, path);
        }
        std::printf("wrote %s\n", path.c_str());
    }
    return 0;
}

metrics::CloudSet load_cloud_dir(const std::string& dir) {
    metrics::CloudSet set;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".xyz") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) set.push_back(io::read_xyz(f.string()).coords);
    if (set.empty()) throw std::runtime_error("no .xyz files in '" + dir + "'");
    return set;
}

int cmd_eval(const std::string& gen_dir, const std::string& ref_dir, std::size_t exact_emd_max,
             const std::string& csv_path, std::size_t threads) {
    const metrics::CloudSet gen = load_cloud_dir(gen_dir);
    const metrics::CloudSet ref = load_cloud_dir(ref_dir);
    const metrics::MetricReport report = metrics::evaluate(gen, ref, exact_emd_max, threads);
    std::cout << report.table();
    if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        if (!csv) throw std::runtime_error("eval: cannot write '" + csv_path + "'");
        csv << report.csv();
        std::printf("csv: %s\n", csv_path.c_str());
    }
    return 0;
}

int cmd_filter(const std::string& in_path, std::size_t k, std::size_t top,
               const std::string& out_path, const std::string& selected_path) {
    geom::PointCloud pc = io::read_xyz(in_path);
    const spectral::SpatialGraph graph = spectral::build_graph(pc, k);
    const spectral::FrequencyScore fs = spectral::frequency_order(pc, graph);

    geom::PointCloud scored = pc;
    scored.features.assign(pc.size(), {0.0});
    for (std::size_t i = 0; i < pc.size(); ++i) scored.features[i][0] = fs.scores[i];
    if (out_path.empty()) {
        for (std::size_t i = 0; i < pc.size(); ++i) {
            std::printf("%.12g %.12g %.12g %.12g\n", pc.coords[i].x, pc.coords[i].y, pc.coords[i].z,
                        fs.scores[i]);
        }
    } else {
        io::write_xyz(scored, out_path);
        std::printf("scores: %s\n", out_path.c_str());
    }
    if (top > 0) {
        if (top > pc.size()) throw std::runtime_error("filter: --top exceeds point count");
        geom::PointCloud sel;
        for (std::size_t m = 0; m < top; ++m) sel.coords.push_back(pc.coords[fs.order[m]]);
        if (!selected_path.empty()) {
            io::write_xyz(sel, selected_path);
            std::printf("selected top %zu: %s\n", top, selected_path.c_str());
        } else {
            for (const auto& p : sel.coords) std::printf("%.12g %.12g %.12g\n", p.x, p.y, p.z);
        }
    }
    return 0;
}

int cmd_serialize(const std::string& in_path, const std::string& order_name, std::size_t bits,
                  const std::string& out_path) {
    geom::PointCloud pc = io::read_xyz(in_path);
    // map into the unit cube if needed
    bool in_unit = true;
    for (const auto& p : pc.coords) {
        for (std::size_t a = 0; a < 3; ++a) in_unit = in_unit && p[a] >= 0.0 && p[a] <= 1.0;
    }
    const std::vector<geom::Vec3> coords =
        in_unit ? pc.coords : model::normalize_to_unit(pc.coords);
    const auto kind = curves::parse_curve_kind(order_name);
    const auto order = curves::serialize_points(coords, kind, bits);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw std::runtime_error("serialize: cannot write '" + out_path + "'");
        out = &file;
    }
    for (std::size_t rank = 0; rank < order.permutation.size(); ++rank) {
        const std::size_t i = order.permutation[rank];
        char line[160];
        std::snprintf(line, sizeof(line), "%zu %llu %.12g %.12g %.12g\n", i,
                      static_cast<unsigned long long>(order.codes[i]), pc.coords[i].x,
                      pc.coords[i].y, pc.coords[i].z);
        *out << line;
    }
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"point-cloud diffusion toolkit", "pcdiff"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train a denoiser on a synthetic dataset");
    std::string config_path, shape_override, train_out = "ckpt.pcdk", loss_csv = "loss_curve.csv";
    std::size_t train_count = 200;
    bool verbose = false;
    train->add_option("--config", config_path, "run configuration file")->required();
    train->add_option("--shape", shape_override, "override the configured shape kind");
    train->add_option("--out", train_out, "checkpoint path");
    train->add_option("--count", train_count, "number of synthetic training clouds");
    train->add_option("--loss-csv", loss_csv, "loss curve output");
    train->add_flag("--verbose", verbose, "per-epoch loss lines");

    // sample
    auto* sample = app.add_subcommand("sample", "draw point clouds from a trained model");
    std::string model_path, out_dir = "samples";
    std::size_t sample_count = 1;
    std::uint64_t sample_seed = 0;
    bool as_ply = false;
    sample->add_option("--model", model_path, "checkpoint path")->required();
    sample->add_option("--count", sample_count, "number of clouds");
    sample->add_option("--seed", sample_seed, "base seed (cloud i uses seed+i)");
    sample->add_option("--out-dir", out_dir, "output directory");
    sample->add_flag("--ply", as_ply, "write binary PLY instead of XYZ");

    // eval
    auto* eval = app.add_subcommand("eval", "generative metrics between two cloud directories");
    std::string gen_dir, ref_dir, csv_path = "metrics.csv";
    std::size_t exact_emd_max = 512, threads = 1;
    eval->add_option("--gen-dir", gen_dir, "generated clouds")->required();
    eval->add_option("--ref-dir", ref_dir, "reference clouds")->required();
    eval->add_option("--exact-emd-max", exact_emd_max, "largest cloud solved with exact EMD");
    eval->add_option("--csv", csv_path, "metric report CSV (empty to skip)");
    eval->add_option("--threads", threads, "parallel distance-table workers");

    // filter
    auto* filter = app.add_subcommand("filter", "frequency scores and top-M selection");
    std::string filter_in, filter_out, selected_out;
    std::size_t filter_k = 32, filter_top = 0;
    filter->add_option("--in", filter_in, "input .xyz cloud")->required();
    filter->add_option("--k", filter_k, "k-NN graph size");
    filter->add_option("--top", filter_top, "also emit the top-M points");
    filter->add_option("--out", filter_out, "scored cloud output (stdout if empty)");
    filter->add_option("--selected", selected_out, "top-M cloud output (stdout if empty)");

    // serialize
    auto* serialize = app.add_subcommand("serialize", "space-filling-curve order of a cloud");
    std::string ser_in, ser_order = "z", ser_out;
    std::size_t ser_bits = 6;
    serialize->add_option("--in", ser_in, "input .xyz cloud")->required();
    serialize->add_option("--order", ser_order, "z|z-trans|hilbert|hilbert-trans");
    serialize->add_option("--bits", ser_bits, "bits per axis");
    serialize->add_option("--out", ser_out, "output path (stdout if empty)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (train->parsed()) {
            return cmd_train(config_path, shape_override, train_out, train_count, loss_csv, verbose);
        }
        if (sample->parsed()) return cmd_sample(model_path, sample_count, sample_seed, out_dir, as_ply);
        if (eval->parsed()) return cmd_eval(gen_dir, ref_dir, exact_emd_max, csv_path, threads);
        if (filter->parsed()) return cmd_filter(filter_in, filter_k, filter_top, filter_out, selected_out);
        if (serialize->parsed()) return cmd_serialize(ser_in, ser_order, ser_bits, ser_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace pcd::cli
