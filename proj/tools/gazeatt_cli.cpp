// Command-line entry points: dataset generation, gaze preprocessing, training,
// evaluation, and ablation/data-ratio sweeps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gazeatt/gaze_processing.hpp"
#include "gazeatt/harness.hpp"
#include "gazeatt/synthetic.hpp"

using namespace gazeatt;

namespace {

std::string default_out(const std::string& sub) {
    const char* root = std::getenv("GAZEATT_OUT");
    std::string base = root ? root : "out";
    return base + "/" + sub;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gaze-supervised attention: data, training, evaluation"};
    app.require_subcommand(1);

    // make-data
    auto* mk = app.add_subcommand("make-data", "generate a synthetic phantom dataset");
    DatasetBuildConfig bcfg;
    std::string mk_out = default_out("data");
    std::vector<int> mk_shape{32, 32, 32};
    bool mk_2d = false;
    std::string mk_expertise = "expert";
    mk->add_option("-n,--num", bcfg.n, "number of records");
    mk->add_option("-o,--out", mk_out, "output directory");
    mk->add_option("--shape", mk_shape, "volume shape D W H")->expected(3);
    mk->add_option("--seed", bcfg.phantom.seed, "base seed");
    mk->add_option("--gaze-ratio", bcfg.gaze_ratio, "fraction of train records with gaze");
    mk->add_option("--expertise", mk_expertise, "expert | non_expert");
    mk->add_flag("--2d", mk_2d, "single-channel 2D mode with blob labels");

    // gaze-prep
    auto* gp = app.add_subcommand("gaze-prep", "fixations CSV -> downsampled gaze map");
    std::string gp_fix, gp_vol, gp_out;
    int gp_kernel = 10, gp_factor = 16;
    gp->add_option("--fixations", gp_fix, "fixations CSV")->required();
    gp->add_option("--volume", gp_vol, "volume container (for the shape)")->required();
    gp->add_option("-o,--out", gp_out, "output container stem")->required();
    gp->add_option("--kernel", gp_kernel, "gaussian kernel size");
    gp->add_option("--factor", gp_factor, "downsample factor");

    // train
    auto* tr = app.add_subcommand("train", "train one experiment");
    std::string tr_cfg, tr_out = default_out("run");
    tr->add_option("-c,--config", tr_cfg, "experiment JSON")->required();
    tr->add_option("-o,--out", tr_out, "run directory");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string ev_ckpt, ev_manifest, ev_split = "test", ev_out;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint stem")->required();
    ev->add_option("--manifest", ev_manifest, "dataset manifest.json")->required();
    ev->add_option("--split", ev_split, "train | val | test");
    ev->add_option("-o,--out", ev_out, "write the report JSON here (default stdout)");

    // sweep
    auto* sw = app.add_subcommand("sweep", "variants x data ratios x seeds");
    std::string sw_cfg, sw_out = default_out("sweep");
    std::vector<double> sw_ratios{1.0};
    std::vector<std::string> sw_variants{"ours"};
    std::vector<std::uint64_t> sw_seeds{1};
    sw->add_option("-c,--config", sw_cfg, "base experiment JSON")->required();
    sw->add_option("-o,--out", sw_out, "sweep directory");
    sw->add_option("--ratios", sw_ratios, "train data ratios")->delimiter(',');
    sw->add_option("--variants", sw_variants, "variant names")->delimiter(',');
    sw->add_option("--seeds", sw_seeds, "seeds")->delimiter(',');

    // report
    auto* rp = app.add_subcommand("report", "print a sweep table from sweep.json");
    std::string rp_json;
    rp->add_option("--sweep", rp_json, "sweep.json path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (mk->parsed()) {
            bcfg.phantom.shape = {mk_shape[0], mk_shape[1], mk_shape[2]};
            if (mk_2d) {
                bcfg.phantom.shape[0] = 1;
                bcfg.phantom.channels = 1;
                bcfg.phantom.num_regions = 1;
            }
            bcfg.gaze.expertise = mk_expertise == "non_expert"
                                      ? GazeSimConfig::Expertise::non_expert
                                      : GazeSimConfig::Expertise::expert;
            const std::string manifest = build_dataset(bcfg, mk_out);
            std::cout << manifest << "\n";
        } else if (gp->parsed()) {
            ImageVolume vol = read_volume(gp_vol);
            FixationSequence raw = read_fixations(gp_fix);
            FixationSequence fix = filter_fixations(raw, FixationFilterConfig{});
            GazeMap imp = rasterize_fixations(fix, vol.shape);
            GazeMap blur = gaussian_gaze_map(imp, gp_kernel);
            GazeMap ds = downsample_gaze_map(blur, gp_factor);
            write_gaze_map(ds, gp_out);
            std::cout << gp_out << ".hdr.json\n";
        } else if (tr->parsed()) {
            ExperimentConfig cfg = experiment_from_json_file(tr_cfg);
            TrainResult res = train(cfg, tr_out);
            std::cout << "checkpoint: " << res.checkpoint_path << "\n"
                      << "best epoch: " << res.best_epoch
                      << "  val metric: " << res.best_val_metric << "\n";
        } else if (ev->parsed()) {
            MetricsReport rep = evaluate(ev_ckpt, ev_manifest, ev_split);
            if (ev_out.empty()) {
                std::cout << rep.to_json() << "\n";
            } else {
                std::ofstream f(ev_out);
                f << rep.to_json() << "\n";
                std::cout << ev_out << "\n";
            }
        } else if (sw->parsed()) {
            ExperimentConfig base = experiment_from_json_file(sw_cfg);
            std::vector<VariantSpec> variants;
            for (const auto& name : sw_variants) variants.push_back(variant_from_name(name));
            SweepResult res = sweep(base, sw_ratios, variants, sw_seeds, sw_out);
            std::cout << res.to_table();
        } else if (rp->parsed()) {
            if (std::filesystem::is_directory(rp_json))
                rp_json = (std::filesystem::path(rp_json) / "sweep.json").string();
            std::ifstream in(rp_json);
            if (!in.good()) throw std::runtime_error("cannot open " + rp_json);
            SweepResult res;
            for (const auto& e : nlohmann::json::parse(in)) {
                SweepCell c;
                c.variant = e.at("variant").get<std::string>();
                c.ratio = e.at("ratio").get<double>();
                c.per_seed_mean_dice = e.at("per_seed").get<std::vector<double>>();
                c.mean = e.at("mean").get<double>();
                c.stddev = e.at("std").get<double>();
                res.cells.push_back(c);
            }
            std::cout << res.to_table();
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
