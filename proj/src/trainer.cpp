#include "geoscene/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "geoscene/checkpoint.hpp"
#include "geoscene/dataset.hpp"
#include "geoscene/errors.hpp"
#include "geoscene/evalkit.hpp"
#include "geoscene/log.hpp"
#include "geoscene/model.hpp"

namespace geoscene {

void TrainConfig::validate() const {
    if (steps < 1) throw param_error("train config: steps must be >= 1");
    if (batch_size < 1) throw param_error("train config: batch_size must be >= 1");
    if (lambda < 0) throw param_error("train config: lambda must be >= 0");
    if (lr <= 0) throw param_error("train config: lr must be > 0");
    if (h % p != 0 || w % p != 0)
        throw param_error("train config: image dims must be divisible by p");
    if (schedule != "cosine" && schedule != "linear")
        throw param_error("train config: schedule must be cosine or linear");
    if (dataset_root.empty()) throw param_error("train config: dataset_root is required");
    if (probe_size < 1) throw param_error("train config: probe_size must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw param_error("config: " + key + " expects true/false, got \"" + v + "\"");
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
    std::istringstream is(v);
    T out;
    is >> out;
    if (is.fail() || !is.eof())
        throw param_error("config: " + key + " expects a number, got \"" + v + "\"");
    return out;
}

} // namespace

void set_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "seed") cfg.seed = parse_num<uint64_t>(value, key);
    else if (key == "dataset_root") cfg.dataset_root = value;
    else if (key == "steps") cfg.steps = parse_num<int>(value, key);
    else if (key == "batch_size") cfg.batch_size = parse_num<int>(value, key);
    else if (key == "lr") cfg.lr = parse_num<double>(value, key);
    else if (key == "lambda") cfg.lambda = parse_num<double>(value, key);
    else if (key == "b_star") cfg.b_star = parse_num<int>(value, key);
    else if (key == "normalize") cfg.normalize = parse_bool(value, key);
    else if (key == "h") cfg.h = parse_num<int>(value, key);
    else if (key == "w") cfg.w = parse_num<int>(value, key);
    else if (key == "p") cfg.p = parse_num<int>(value, key);
    else if (key == "d") cfg.d = parse_num<int>(value, key);
    else if (key == "heads") cfg.heads = parse_num<int>(value, key);
    else if (key == "blocks") cfg.blocks = parse_num<int>(value, key);
    else if (key == "mlp_ratio") cfg.mlp_ratio = parse_num<int>(value, key);
    else if (key == "t_train") cfg.t_train = parse_num<int>(value, key);
    else if (key == "schedule") cfg.schedule = value;
    else if (key == "eval_interval") cfg.eval_interval = parse_num<int>(value, key);
    else if (key == "checkpoint_interval") cfg.checkpoint_interval = parse_num<int>(value, key);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "grad_clip") cfg.grad_clip = parse_num<double>(value, key);
    else if (key == "detach_attention") cfg.detach_attention = parse_bool(value, key);
    else if (key == "resume") cfg.resume = value;
    else if (key == "probe_size") cfg.probe_size = parse_num<int>(value, key);
    else throw param_error("config: unknown key \"" + key + "\"");
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open config " + path.string());
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw param_error(path.string() + ":" + std::to_string(lineno) +
                              ": expected key=value");
        set_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::string dump_config(const TrainConfig& c) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "seed=" << c.seed << "\ndataset_root=" << c.dataset_root
       << "\nsteps=" << c.steps << "\nbatch_size=" << c.batch_size << "\nlr=" << c.lr
       << "\nlambda=" << c.lambda << "\nb_star=" << c.b_star
       << "\nnormalize=" << (c.normalize ? "true" : "false") << "\nh=" << c.h
       << "\nw=" << c.w << "\np=" << c.p << "\nd=" << c.d << "\nheads=" << c.heads
       << "\nblocks=" << c.blocks << "\nmlp_ratio=" << c.mlp_ratio
       << "\nt_train=" << c.t_train << "\nschedule=" << c.schedule
       << "\neval_interval=" << c.eval_interval
       << "\ncheckpoint_interval=" << c.checkpoint_interval
       << "\nout_dir=" << c.out_dir << "\ngrad_clip=" << c.grad_clip
       << "\ndetach_attention=" << (c.detach_attention ? "true" : "false")
       << "\nresume=" << c.resume << "\nprobe_size=" << c.probe_size << "\n";
    return os.str();
}

namespace {

struct PreparedSample {
    TensorPtr x0;  // clean target patches
    TensorPtr ref; // reference patches
    std::vector<int> cond;
    TensorPtr m0;
    TensorPtr m1;
};

PreparedSample prepare(const LoadedSample& s, const ModelConfig& mc) {
    PreparedSample p;
    p.x0 = patchify<float>(s.target, mc.p);
    p.ref = patchify<float>(s.reference, mc.p);
    const auto flat = flatten_condition(s.condition);
    p.cond.assign(flat.begin(), flat.end());
    p.m0 = make_tensor<float>({s.mask0.h, s.mask0.w});
    p.m0->data = s.mask0.v;
    p.m1 = make_tensor<float>({s.mask1.h, s.mask1.w});
    p.m1->data = s.mask1.v;
    return p;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

/// mean per-sample Pearson between captured maps and mask targets on the
/// fixed probe batch; forward runs detached from any tape
std::string probe_agreement(const Model& model, const NoiseSchedule& sched,
                            const std::vector<PreparedSample>& probe,
                            const std::vector<TensorPtr>& probe_eps, int probe_t) {
    Tape tape;
    NoGradGuardT<float> guard(tape);
    double sum = 0.0;
    int n = 0;
    for (size_t i = 0; i < probe.size(); ++i) {
        const auto& s = probe[i];
        auto x_t = add_noise(s.x0, probe_eps[i], probe_t, sched);
        auto out = model.forward(tape, x_t, s.ref, s.cond, probe_t);
        double acc = 0.0;
        int parts = 0;
        auto add_part = [&](const TensorPtr& a, const TensorPtr& m) {
            auto r = attention_agreement(a->data.data(), m->data.data(), m->numel());
            if (r) {
                acc += *r;
                ++parts;
            }
        };
        add_part(out.capture.a0, s.m0);
        add_part(out.capture.a1, s.m1);
        if (parts > 0) {
            sum += acc / parts;
            ++n;
        }
    }
    if (n == 0) return "";
    return fmt(sum / n);
}

std::vector<size_t> parse_order(const std::string& s) {
    std::vector<size_t> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) out.push_back(size_t(std::stoull(tok)));
    return out;
}

std::string dump_order(const std::vector<size_t>& order) {
    std::ostringstream os;
    for (size_t i = 0; i < order.size(); ++i) {
        if (i) os << ",";
        os << order[i];
    }
    return os.str();
}

} // namespace

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    Dataset ds = Dataset::open(cfg.dataset_root, true);
    if (ds.size() == 0) throw data_error("train: dataset is empty");
    if (ds.config().h != cfg.h || ds.config().w != cfg.w || ds.config().p != cfg.p)
        throw data_error("train: dataset geometry (" + std::to_string(ds.config().h) +
                         "x" + std::to_string(ds.config().w) + "/p" +
                         std::to_string(ds.config().p) + ") disagrees with config");

    ModelConfig mc;
    mc.h = cfg.h;
    mc.w = cfg.w;
    mc.p = cfg.p;
    mc.d = cfg.d;
    mc.heads = cfg.heads;
    mc.blocks = cfg.blocks;
    mc.b_star = cfg.b_star < 0 ? cfg.blocks / 2 : cfg.b_star;
    mc.mlp_ratio = cfg.mlp_ratio;
    mc.t_train = cfg.t_train;
    mc.n_cond = kCondTokens;
    mc.cond_vocab = kCondVocab;

    Model model(mc, cfg.seed);
    AdamConfig ac;
    ac.lr = cfg.lr;
    Adam adam(model.param_tensors(), ac);

    const NoiseSchedule sched = cfg.schedule == "cosine"
                                    ? NoiseSchedule::cosine(cfg.t_train)
                                    : NoiseSchedule::linear(cfg.t_train);

    log_info("loading ", ds.size(), " samples from ", cfg.dataset_root);
    std::vector<PreparedSample> samples;
    samples.reserve(ds.size());
    for (size_t i = 0; i < ds.size(); ++i) samples.push_back(prepare(ds.load(i), mc));

    const Rng root(cfg.seed);
    Rng batch_rng = root.fork("batch");
    Rng noise_rng = root.fork("noise");
    Rng t_rng = root.fork("timestep");

    // fixed probe inputs for the agreement column
    const int probe_n = int(std::min<size_t>(size_t(cfg.probe_size), samples.size()));
    const int probe_t = cfg.t_train / 2;
    std::vector<TensorPtr> probe_eps;
    {
        Rng probe_rng = root.fork("probe");
        for (int i = 0; i < probe_n; ++i) {
            auto e = make_tensor<float>(samples[size_t(i)].x0->shape);
            for (auto& v : e->data) v = probe_rng.normal_f();
            probe_eps.push_back(e);
        }
    }
    const std::vector<PreparedSample> probe(samples.begin(), samples.begin() + probe_n);

    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size(); // forces a shuffle on first use
    int64_t start_step = 0;

    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path metrics_path =
        std::filesystem::path(cfg.out_dir) / "metrics.csv";

    if (!cfg.resume.empty()) {
        Checkpoint c = load_checkpoint(cfg.resume);
        restore_params(model, c);
        restore_adam(adam, model, c);
        start_step = c.step;
        auto need = [&](const char* key) -> const std::string& {
            auto it = c.rng_states.find(key);
            if (it == c.rng_states.end())
                throw format_error(cfg.resume + ": checkpoint missing stream state " + key);
            return it->second;
        };
        batch_rng.set_state(need("stream.batch"));
        noise_rng.set_state(need("stream.noise"));
        t_rng.set_state(need("stream.timestep"));
        order = parse_order(need("epoch.order"));
        cursor = size_t(std::stoull(need("epoch.cursor")));
        if (order.size() != samples.size())
            throw data_error("resume: checkpoint epoch order length " +
                             std::to_string(order.size()) + " != dataset size " +
                             std::to_string(samples.size()));
        log_info("resumed from ", cfg.resume, " at step ", start_step);
    }

    std::ofstream metrics(metrics_path,
                          start_step > 0 ? std::ios::app : std::ios::out);
    if (!metrics) throw data_error("cannot open " + metrics_path.string());
    if (start_step == 0)
        metrics << "step,l_diff,l_attn0,l_attn1,l_attn,total,attn_agreement\n";

    auto next_index = [&]() {
        if (cursor >= order.size()) {
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[size_t(batch_rng.uniform_int(int64_t(i)))]);
            cursor = 0;
        }
        return order[cursor++];
    };

    auto save_ckpt = [&](const std::filesystem::path& path, int64_t step) {
        std::map<std::string, std::string> states;
        states["stream.batch"] = batch_rng.state();
        states["stream.noise"] = noise_rng.state();
        states["stream.timestep"] = t_rng.state();
        states["epoch.order"] = dump_order(order);
        states["epoch.cursor"] = std::to_string(cursor);
        save_checkpoint(path, snapshot(model, &adam, step, std::move(states)));
    };

    TrainResult result;
    result.steps_run = start_step;
    Tape tape;
    LossBreakdown bd;
    for (int64_t step = start_step + 1; step <= cfg.steps; ++step) {
        adam.zero_grad();
        bd = LossBreakdown{};
        bd.lambda_used = cfg.lambda;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const PreparedSample& s = samples[next_index()];
            const int t = int(t_rng.uniform_int(cfg.t_train));
            auto eps = make_tensor<float>(s.x0->shape);
            for (auto& v : eps->data) v = noise_rng.normal_f();

            tape.reset();
            auto x_t = add_noise(s.x0, eps, t, sched);
            auto out = model.forward(tape, x_t, s.ref, s.cond, t, cfg.detach_attention);
            auto l_diff = diffusion_loss(tape, out.eps_hat, eps, t, sched);
            auto attn = attention_loss(tape, out.capture.a0, s.m0, out.capture.a1,
                                       s.m1, cfg.normalize);
            auto total = total_loss(tape, l_diff, attn.total, cfg.lambda);

            const double total_v = double(total->item());
            if (!std::isfinite(total_v))
                throw numeric_error("train: non-finite loss at step " +
                                    std::to_string(step));
            bd.l_diff += double(l_diff->item()) / cfg.batch_size;
            bd.l_attn0 += double(attn.l0->item()) / cfg.batch_size;
            bd.l_attn1 += double(attn.l1->item()) / cfg.batch_size;
            bd.l_attn += double(attn.total->item()) / cfg.batch_size;
            bd.total += total_v / cfg.batch_size;

            tape.backward(scale(tape, total, 1.0 / cfg.batch_size));
        }
        if (cfg.grad_clip > 0) adam.clip_grad_norm(cfg.grad_clip);
        adam.step();

        std::string agreement;
        if (cfg.eval_interval > 0 &&
            (step % cfg.eval_interval == 0 || step == cfg.steps)) {
            agreement = probe_agreement(model, sched, probe, probe_eps, probe_t);
            metrics << step << "," << fmt(bd.l_diff) << "," << fmt(bd.l_attn0) << ","
                    << fmt(bd.l_attn1) << "," << fmt(bd.l_attn) << "," << fmt(bd.total)
                    << "," << agreement << "\n";
            metrics.flush();
            log_info("step ", step, " total ", bd.total, " l_diff ", bd.l_diff,
                     " l_attn ", bd.l_attn,
                     agreement.empty() ? "" : (" agreement " + agreement));
        } else {
            metrics << step << "," << fmt(bd.l_diff) << "," << fmt(bd.l_attn0) << ","
                    << fmt(bd.l_attn1) << "," << fmt(bd.l_attn) << "," << fmt(bd.total)
                    << ",\n";
        }

        if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 &&
            step != cfg.steps)
            save_ckpt(std::filesystem::path(cfg.out_dir) /
                          ("checkpoint_" + std::to_string(step) + ".gamkpack"),
                      step);
        result.steps_run = step;
    }
    metrics.close();

    const std::filesystem::path final_path =
        std::filesystem::path(cfg.out_dir) / "checkpoint_final.gamkpack";
    save_ckpt(final_path, result.steps_run);
    result.metrics_path = metrics_path;
    result.checkpoint_path = final_path;
    result.last = bd;
    return result;
}

} // namespace geoscene
