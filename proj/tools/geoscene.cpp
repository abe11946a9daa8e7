#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geoscene/checkpoint.hpp"
#include "geoscene/correspondence.hpp"
#include "geoscene/dataset.hpp"
#include "geoscene/errors.hpp"
#include "geoscene/evalkit.hpp"
#include "geoscene/image.hpp"
#include "geoscene/log.hpp"
#include "geoscene/sampler.hpp"
#include "geoscene/scenegen.hpp"
#include "geoscene/trainer.hpp"

namespace fs = std::filesystem;
using namespace geoscene;

namespace {

void echo(const std::string& cmd, const std::vector<std::pair<std::string, std::string>>& kv) {
    std::cerr << "[config] command=" << cmd;
    for (const auto& [k, v] : kv) std::cerr << " " << k << "=" << v;
    std::cerr << "\n";
}

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

void require_writable_dir(const fs::path& out, bool force) {
    if (fs::exists(out) && !fs::is_directory(out))
        throw data_error(out.string() + " exists and is not a directory");
    if (fs::exists(out) && !fs::is_empty(out) && !force)
        throw data_error(out.string() + " is not empty (pass --force to reuse)");
    fs::create_directories(out);
}

void print_votes(const VoteAggregate& agg) {
    for (const auto& [method, pct] : agg.percentages)
        std::cout << method << " " << num(pct) << "\n";
    std::cout << "pairs_used " << agg.pairs_used << "\n";
    std::cout << "pairs_skipped " << agg.pairs_skipped << "\n";
}

struct GenDataArgs {
    uint64_t seed = 0;
    int count = 16;
    std::string out;
    int size = 64, patch = 8, matches = 48;
    int kernel_r = 3;
    double kernel_sigma = 1.5;
    double clip_max = 1.0;
    bool no_normalize = false;
    bool force = false;
    int workers = 1;
};

void run_gen_data(const GenDataArgs& a) {
    GenConfig cfg;
    cfg.h = a.size;
    cfg.w = a.size;
    cfg.p = a.patch;
    cfg.n_matches = a.matches;
    cfg.kernel_r = a.kernel_r;
    cfg.kernel_sigma = a.kernel_sigma;
    cfg.clip_max = float(a.clip_max);
    cfg.normalize_masks = !a.no_normalize;
    cfg.validate();
    echo("gen-data", {{"seed", std::to_string(a.seed)},
                      {"count", std::to_string(a.count)},
                      {"out", a.out},
                      {"size", std::to_string(a.size)},
                      {"patch", std::to_string(a.patch)},
                      {"matches", std::to_string(a.matches)},
                      {"kernel_r", std::to_string(a.kernel_r)},
                      {"kernel_sigma", num(a.kernel_sigma)},
                      {"workers", std::to_string(a.workers)}});
    if (a.count < 1) throw param_error("gen-data: --count must be >= 1");
    require_writable_dir(a.out, a.force);
    generate_dataset(a.out, a.seed, a.count, cfg, a.workers);
    std::cout << "wrote " << a.count << " samples to " << a.out << "\n";
}

struct BuildMasksArgs {
    std::string matches, out;
    int h = 64, w = 64, patch = 8;
    int kernel_r = 3;
    double kernel_sigma = 1.5;
    double clip_max = 1.0;
    bool no_normalize = false;
};

void run_build_masks(const BuildMasksArgs& a) {
    echo("build-masks", {{"matches", a.matches},
                         {"h", std::to_string(a.h)},
                         {"w", std::to_string(a.w)},
                         {"patch", std::to_string(a.patch)},
                         {"out", a.out},
                         {"kernel_r", std::to_string(a.kernel_r)},
                         {"kernel_sigma", num(a.kernel_sigma)}});
    MatchSet ms = read_matches_jsonl(a.matches, a.h, a.w);
    if (ms.size() == 0)
        std::cout << "warning: no matches in " << a.matches << "; masks are zero\n";
    const RadialKernel kernel = gaussian_kernel(a.kernel_r, a.kernel_sigma);
    auto [m0, m1] = splat_masks(ms, a.h, a.w, kernel, float(a.clip_max));
    CorrespondenceMask d0 = downsample_mask(m0, a.patch, {}, !a.no_normalize);
    CorrespondenceMask d1 = downsample_mask(m1, a.patch, {}, !a.no_normalize);
    fs::create_directories(a.out);
    save_mask(fs::path(a.out) / "mask0.gamk", d0);
    save_mask(fs::path(a.out) / "mask1.gamk", d1);
    auto stats = [](const CorrespondenceMask& m) {
        float mx = 0;
        size_t nz = 0;
        for (float v : m.v) {
            mx = std::max(mx, v);
            if (v != 0.0f) ++nz;
        }
        return std::pair<float, size_t>(mx, nz);
    };
    const auto [mx0, nz0] = stats(d0);
    const auto [mx1, nz1] = stats(d1);
    std::cout << "matches " << ms.size() << "\n";
    std::cout << "mask0 max " << num(mx0) << " nonzero " << nz0 << "\n";
    std::cout << "mask1 max " << num(mx1) << " nonzero " << nz1 << "\n";
}

struct TrainArgs {
    std::string config;
    std::vector<std::string> sets;
};

void run_train(const TrainArgs& a) {
    TrainConfig cfg = load_train_config(a.config);
    for (const auto& kv : a.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw usage_error("--set expects key=value, got \"" + kv + "\"");
        set_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    std::cerr << "[config] command=train seed=" << cfg.seed << "\n" << dump_config(cfg);
    TrainResult r = train(cfg);
    std::cout << "steps " << r.steps_run << "\n";
    std::cout << "metrics " << r.metrics_path.string() << "\n";
    std::cout << "checkpoint " << r.checkpoint_path.string() << "\n";
    std::cout << "final_total " << num(r.last.total) << "\n";
}

struct SampleArgs {
    std::string checkpoint, out, id;
    std::string dataset;
    int index = 0;
    std::string reference, shape, color, relation;
    int anchor = 0;
    int steps = 28;
    uint64_t seed = 0;
    std::string schedule = "cosine";
    bool stochastic = false;
};

void run_sample(const SampleArgs& a) {
    SampleRequest req;
    req.checkpoint = a.checkpoint;
    req.steps = a.steps;
    req.seed = a.seed;
    req.schedule = a.schedule;
    req.stochastic = a.stochastic;
    std::string id = a.id;
    if (!a.dataset.empty()) {
        Dataset ds = Dataset::open(a.dataset);
        LoadedSample s = ds.load(size_t(a.index));
        req.reference = s.reference;
        req.condition = s.condition;
        if (id.empty()) id = s.id;
    } else if (!a.reference.empty()) {
        req.reference = load_png(a.reference);
        EntitySpec e;
        e.shape = shape_id(a.shape);
        e.color = color_id(a.color);
        e.relation = relation_id(a.relation);
        e.anchor = a.anchor;
        req.condition = encode_condition(e);
        if (id.empty()) id = "sample";
    } else {
        throw usage_error("sample: pass --dataset/--index or --reference with "
                          "--shape/--color/--relation/--anchor");
    }
    echo("sample", {{"checkpoint", a.checkpoint},
                    {"id", id},
                    {"steps", std::to_string(a.steps)},
                    {"seed", std::to_string(a.seed)},
                    {"schedule", a.schedule},
                    {"stochastic", a.stochastic ? "true" : "false"},
                    {"out", a.out}});
    SampleOut s = generate(req);
    write_outputs(a.out, id, s);
    std::cout << (fs::path(a.out) / (id + "_gen.png")).string() << "\n";
    std::cout << (fs::path(a.out) / (id + "_attn0.pgm")).string() << "\n";
    std::cout << (fs::path(a.out) / (id + "_attn1.pgm")).string() << "\n";
}

struct InspectArgs {
    std::string checkpoint, dataset, out, id;
    int index = 0;
    int t = -1;
    uint64_t seed = 0;
    std::string schedule = "cosine";
};

void run_inspect_attn(const InspectArgs& a) {
    Checkpoint c = load_checkpoint(a.checkpoint);
    Model model(c.config, 0);
    restore_params(model, c);
    NoiseSchedule sched = a.schedule == "linear"
                              ? NoiseSchedule::linear(c.config.t_train)
                              : NoiseSchedule::cosine(c.config.t_train);
    Dataset ds = Dataset::open(a.dataset);
    LoadedSample s = ds.load(size_t(a.index));
    if (s.target.h != c.config.h || s.target.w != c.config.w)
        throw dim_error("inspect-attn: sample dims do not match checkpoint");
    const int t = a.t < 0 ? c.config.t_train / 2 : a.t;
    echo("inspect-attn", {{"checkpoint", a.checkpoint},
                          {"dataset", a.dataset},
                          {"id", s.id},
                          {"t", std::to_string(t)},
                          {"seed", std::to_string(a.seed)}});
    auto x0 = patchify<float>(s.target, c.config.p);
    auto ref = patchify<float>(s.reference, c.config.p);
    const auto flat = flatten_condition(s.condition);
    AttnExport ex = export_attention(model, sched, x0, ref,
                                     {flat.begin(), flat.end()}, t, a.seed);
    const std::string id = a.id.empty() ? s.id : a.id;
    fs::create_directories(a.out);
    save_pgm(fs::path(a.out) / (id + "_attn0.pgm"), ex.heat0, c.config.h, c.config.w);
    save_pgm(fs::path(a.out) / (id + "_attn1.pgm"), ex.heat1, c.config.h, c.config.w);
    auto report = [&](const char* name, const CorrespondenceMask& attn,
                      const CorrespondenceMask& mask) {
        auto r = attention_agreement(attn, mask);
        std::cout << name << "_agreement " << (r ? num(*r) : "n/a") << "\n";
    };
    report("attn0", ex.attn0, s.mask0);
    report("attn1", ex.attn1, s.mask1);
    std::cout << (fs::path(a.out) / (id + "_attn0.pgm")).string() << "\n";
    std::cout << (fs::path(a.out) / (id + "_attn1.pgm")).string() << "\n";
}

struct EvalArgs {
    std::string votes;
    double alpha = 0.8;
    std::string scores, prefs;
    std::string gen_dir, dataset;
    std::string report;
};

void run_eval(const EvalArgs& a) {
    echo("eval", {{"votes", a.votes},
                  {"scores", a.scores},
                  {"prefs", a.prefs},
                  {"gen_dir", a.gen_dir},
                  {"dataset", a.dataset}});
    bool did = false;
    AgreementReport rep;
    if (!a.votes.empty()) {
        const auto records = read_votes_csv(a.votes);
        const VoteAggregate agg = aggregate_votes(records, a.alpha);
        print_votes(agg);
        rep.preference_pct = agg.percentages;
        rep.valid_pairs = agg.pairs_used;
        rep.skipped_pairs = agg.pairs_skipped;
        did = true;
    }
    if (!a.scores.empty() || !a.prefs.empty()) {
        if (a.scores.empty() || a.prefs.empty())
            throw usage_error("eval: --scores and --prefs must be passed together");
        const ScoreTable st = read_scores_csv(a.scores);
        const auto prefs = read_preferences_csv(a.prefs);
        const double acc = pairwise_accuracy(st, prefs);
        std::cout << "pairwise_accuracy " << num(acc) << "\n";
        rep.pairwise_pct.emplace_back("scores", acc);
        did = true;
    }
    if (!a.gen_dir.empty() || !a.dataset.empty()) {
        if (a.gen_dir.empty() || a.dataset.empty())
            throw usage_error("eval: --gen-dir and --dataset must be passed together");
        Dataset ds = Dataset::open(a.dataset);
        double psnr_sum = 0;
        int psnr_n = 0, rel_detected = 0, rel_correct = 0, rel_n = 0, missing = 0;
        for (size_t i = 0; i < ds.size(); ++i) {
            const fs::path gen_path =
                fs::path(a.gen_dir) / (ds.ids()[i] + "_gen.png");
            if (!fs::exists(gen_path)) {
                ++missing;
                continue;
            }
            const Image gen = load_png(gen_path);
            TrainingSample truth = ds.regenerate(i);
            const double p = scene_error(gen, truth.target, truth.entity_footprint);
            psnr_sum += p;
            ++psnr_n;
            const RelationResult rr = relation_accuracy(gen, truth.entity, truth.scene);
            ++rel_n;
            rel_detected += rr.detected ? 1 : 0;
            rel_correct += (rr.detected && rr.correct) ? 1 : 0;
            std::cout << ds.ids()[i] << " psnr " << num(p) << " detected "
                      << rr.detected << " correct " << rr.correct << "\n";
        }
        if (psnr_n == 0)
            throw data_error("eval: no generated images found under " + a.gen_dir);
        std::cout << "mean_psnr " << num(psnr_sum / psnr_n) << "\n";
        std::cout << "relation_detected " << num(100.0 * rel_detected / rel_n) << "\n";
        std::cout << "relation_correct " << num(100.0 * rel_correct / rel_n) << "\n";
        if (missing > 0) std::cout << "missing " << missing << "\n";
        did = true;
    }
    if (!did)
        throw usage_error("eval: pass --votes, --scores/--prefs, or --gen-dir/--dataset");
    if (!a.report.empty()) {
        if (a.report.size() > 4 && a.report.substr(a.report.size() - 4) == ".csv")
            write_report_csv(a.report, rep);
        else
            write_report_json(a.report, rep);
        std::cout << "report " << a.report << "\n";
    }
}

struct VotesArgs {
    std::string votes;
    double alpha = 0.8;
};

void run_votes(const VotesArgs& a) {
    echo("votes", {{"votes", a.votes}, {"alpha", num(a.alpha)}});
    print_votes(aggregate_votes(read_votes_csv(a.votes), a.alpha));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-view scene lab: data generation, correspondence masks, "
                 "joint-attention diffusion training, sampling, evaluation"};
    app.set_version_flag("--version", std::string("geoscene ") + GEOSCENE_VERSION);
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* gen_data = app.add_subcommand("gen-data", "generate a paired two-view dataset");
    gen_data->add_option("--seed", gd.seed, "root seed");
    gen_data->add_option("--count", gd.count, "number of samples");
    gen_data->add_option("--out", gd.out, "output directory")->required();
    gen_data->add_option("--size", gd.size, "image height and width");
    gen_data->add_option("--patch", gd.patch, "patch size");
    gen_data->add_option("--matches", gd.matches, "match points per pair");
    gen_data->add_option("--kernel-r", gd.kernel_r, "splat kernel radius");
    gen_data->add_option("--kernel-sigma", gd.kernel_sigma, "splat kernel sigma");
    gen_data->add_option("--clip-max", gd.clip_max, "mask clip ceiling");
    gen_data->add_flag("--no-normalize", gd.no_normalize, "skip mask max-normalization");
    gen_data->add_flag("--force", gd.force, "reuse a non-empty output directory");
    gen_data->add_option("--workers", gd.workers, "parallel generation workers");
    gen_data->callback([&] { run_gen_data(gd); });

    BuildMasksArgs bm;
    auto* build_masks =
        app.add_subcommand("build-masks", "splat correspondence masks from matches");
    build_masks->set_help_flag("--help", "print this help message and exit");
    build_masks->add_option("--matches", bm.matches, "match JSONL file")->required();
    build_masks->add_option("--h", bm.h, "image height")->required();
    build_masks->add_option("--w", bm.w, "image width")->required();
    build_masks->add_option("--patch", bm.patch, "pooling patch size")->required();
    build_masks->add_option("--out", bm.out, "output directory")->required();
    build_masks->add_option("--kernel-r", bm.kernel_r, "splat kernel radius");
    build_masks->add_option("--kernel-sigma", bm.kernel_sigma, "splat kernel sigma");
    build_masks->add_option("--clip-max", bm.clip_max, "mask clip ceiling");
    build_masks->add_flag("--no-normalize", bm.no_normalize,
                          "skip mask max-normalization");
    build_masks->callback([&] { run_build_masks(bm); });

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "train the double-stream denoiser");
    tr->add_option("--config", ta.config, "key=value config file")->required();
    tr->add_option("--set", ta.sets, "override a config key (key=value, repeatable)");
    tr->callback([&] { run_train(ta); });

    SampleArgs sa;
    auto* sm = app.add_subcommand("sample", "generate an image from a checkpoint");
    sm->add_option("--checkpoint", sa.checkpoint, "trained checkpoint")->required();
    sm->add_option("--out", sa.out, "output directory")->required();
    sm->add_option("--dataset", sa.dataset, "dataset root for reference/condition");
    sm->add_option("--index", sa.index, "sample index within --dataset");
    sm->add_option("--reference", sa.reference, "reference PNG (with condition flags)");
    sm->add_option("--shape", sa.shape, "entity shape name");
    sm->add_option("--color", sa.color, "entity color name");
    sm->add_option("--relation", sa.relation, "entity relation name");
    sm->add_option("--anchor", sa.anchor, "anchor object index");
    sm->add_option("--id", sa.id, "output file stem");
    sm->add_option("--steps", sa.steps, "denoising steps");
    sm->add_option("--seed", sa.seed, "sampling seed");
    sm->add_option("--schedule", sa.schedule, "cosine or linear");
    sm->add_flag("--stochastic", sa.stochastic, "inject fresh noise each step");
    sm->callback([&] { run_sample(sa); });

    InspectArgs ia;
    auto* in = app.add_subcommand("inspect-attn",
                                  "export cross-view attention heatmaps for a sample");
    in->add_option("--checkpoint", ia.checkpoint, "trained checkpoint")->required();
    in->add_option("--dataset", ia.dataset, "dataset root")->required();
    in->add_option("--index", ia.index, "sample index");
    in->add_option("--out", ia.out, "output directory")->required();
    in->add_option("--id", ia.id, "output file stem");
    in->add_option("--t", ia.t, "timestep (default: half the schedule)");
    in->add_option("--seed", ia.seed, "noise seed");
    in->add_option("--schedule", ia.schedule, "cosine or linear");
    in->callback([&] { run_inspect_attn(ia); });

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "evaluate votes, scores, or generations");
    ev->add_option("--votes", ea.votes, "vote records CSV");
    ev->add_option("--alpha", ea.alpha, "vote temperature exponent");
    ev->add_option("--scores", ea.scores, "metric scores CSV");
    ev->add_option("--prefs", ea.prefs, "human preference CSV");
    ev->add_option("--gen-dir", ea.gen_dir, "directory of <id>_gen.png outputs");
    ev->add_option("--dataset", ea.dataset, "dataset root for ground truth");
    ev->add_option("--report", ea.report, "write a JSON or CSV report");
    ev->callback([&] { run_eval(ea); });

    VotesArgs va;
    auto* vo = app.add_subcommand("votes", "aggregate preference votes");
    vo->add_option("--votes", va.votes, "vote records CSV")->required();
    vo->add_option("--alpha", va.alpha, "vote temperature exponent");
    vo->callback([&] { run_votes(va); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const geoscene::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
