#include "geoscene/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "geoscene/checkpoint.hpp"
#include "geoscene/errors.hpp"
#include "geoscene/rng.hpp"
#include "geoscene/scenegen.hpp"

namespace geoscene {

std::vector<int> sample_timesteps(int t_train, int steps) {
    if (steps < 1) throw param_error("sampler: steps must be >= 1");
    if (steps > t_train)
        throw param_error("sampler: steps " + std::to_string(steps) +
                          " exceeds schedule length " + std::to_string(t_train));
    std::vector<int> ts(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k)
        ts[size_t(steps - 1 - k)] =
            int(int64_t(k + 1) * int64_t(t_train) / int64_t(steps)) - 1;
    return ts;
}

SampleOut run_sampler(const Model& model, const NoiseSchedule& sched,
                      const TensorPtr& ref_patches, const std::vector<int>& cond_ids,
                      int steps, uint64_t seed, bool stochastic) {
    const ModelConfig& mc = model.config();
    if (sched.t_train != mc.t_train)
        throw param_error("sampler: schedule length " + std::to_string(sched.t_train) +
                          " disagrees with model t_train " + std::to_string(mc.t_train));
    const auto ts = sample_timesteps(mc.t_train, steps);

    const int l0 = mc.tokens_per_view();
    const int dim = 3 * mc.p * mc.p;
    const size_t n = size_t(l0) * dim;

    const Rng root(seed);
    Rng init_rng = root.fork("sample.init");
    Rng z_rng = root.fork("sample.noise");

    std::vector<double> x(n);
    for (auto& v : x) v = init_rng.normal();

    auto x_f = make_tensor<float>({l0, dim});
    Tape tape;
    NoGradGuardT<float> guard(tape);
    CaptureT<float> capture;

    for (size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        for (size_t i = 0; i < n; ++i) x_f->data[i] = float(x[i]);
        auto out = model.forward(tape, x_f, ref_patches, cond_ids, t);
        capture = out.capture;
        const std::vector<float>& eps = out.eps_hat->data;

        const double ab_t = sched.alpha_bar[size_t(t)];
        const double sig_t = sched.sigma[size_t(t)];
        const double rab_t = std::sqrt(ab_t);

        if (k + 1 == ts.size()) {
            for (size_t i = 0; i < n; ++i)
                x[i] = (x[i] - sig_t * double(eps[i])) / rab_t;
            break;
        }
        const int tn = ts[k + 1];
        const double ab_n = sched.alpha_bar[size_t(tn)];
        const double sig_n = sched.sigma[size_t(tn)];
        const double rab_n = std::sqrt(ab_n);
        double dir = sig_n;
        double noise = 0.0;
        if (stochastic && sig_t > 0.0 && ab_n > 0.0) {
            noise = (sig_n / sig_t) * std::sqrt(std::max(0.0, 1.0 - ab_t / ab_n));
            noise = std::min(noise, sig_n);
            dir = std::sqrt(std::max(0.0, sig_n * sig_n - noise * noise));
        }
        for (size_t i = 0; i < n; ++i) {
            const double x0_hat = (x[i] - sig_t * double(eps[i])) / rab_t;
            x[i] = rab_n * x0_hat + dir * double(eps[i]);
            if (noise > 0.0) x[i] += noise * z_rng.normal();
        }
    }

    SampleOut out;
    out.tokens = x;
    TensorT<double> tok;
    tok.shape = {l0, dim};
    tok.data = x;
    out.image = unpatchify(tok, mc.h, mc.w, mc.p);

    auto to_mask = [](const TensorPtr& t) {
        CorrespondenceMask m;
        m.h = t->shape[0];
        m.w = t->shape[1];
        m.v = t->data;
        return m;
    };
    out.attn0 = to_mask(capture.a0);
    out.attn1 = to_mask(capture.a1);
    return out;
}

SampleOut generate(const SampleRequest& req) {
    Checkpoint c = load_checkpoint(req.checkpoint);
    Model model(c.config, 0);
    restore_params(model, c);
    if (req.reference.h != c.config.h || req.reference.w != c.config.w)
        throw dim_error("sampler: reference " + std::to_string(req.reference.h) + "x" +
                        std::to_string(req.reference.w) + " does not match checkpoint " +
                        std::to_string(c.config.h) + "x" + std::to_string(c.config.w));
    NoiseSchedule sched = req.schedule == "linear"
                              ? NoiseSchedule::linear(c.config.t_train)
                              : NoiseSchedule::cosine(c.config.t_train);
    auto ref = patchify<float>(req.reference, c.config.p);
    const auto flat = flatten_condition(req.condition);
    const std::vector<int> cond(flat.begin(), flat.end());
    return run_sampler(model, sched, ref, cond, req.steps, req.seed, req.stochastic);
}

AttnExport export_attention(const Model& model, const NoiseSchedule& sched,
                            const TensorPtr& x0, const TensorPtr& ref_patches,
                            const std::vector<int>& cond_ids, int t, uint64_t seed) {
    sched.check_t(t);
    const ModelConfig& mc = model.config();
    Rng noise = Rng(seed).fork("attn.noise");
    auto eps = make_tensor<float>(x0->shape);
    for (auto& v : eps->data) v = noise.normal_f();
    auto x_t = add_noise(x0, eps, t, sched);

    Tape tape;
    NoGradGuardT<float> guard(tape);
    auto out = model.forward(tape, x_t, ref_patches, cond_ids, t);

    AttnExport ex;
    auto to_mask = [](const TensorPtr& a) {
        CorrespondenceMask m;
        m.h = a->shape[0];
        m.w = a->shape[1];
        m.v = a->data;
        return m;
    };
    ex.attn0 = to_mask(out.capture.a0);
    ex.attn1 = to_mask(out.capture.a1);
    ex.heat0 = heatmap_u8(ex.attn0, mc.h, mc.w);
    ex.heat1 = heatmap_u8(ex.attn1, mc.h, mc.w);
    return ex;
}

std::vector<uint8_t> heatmap_u8(const CorrespondenceMask& m, int h, int w) {
    if (m.h < 1 || m.w < 1 || h < m.h || w < m.w)
        throw dim_error("heatmap: target dims smaller than grid");
    float lo = m.v[0], hi = m.v[0];
    for (float v : m.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<uint8_t> out(size_t(h) * w);
    for (int y = 0; y < h; ++y) {
        const int sy = y * m.h / h;
        for (int x = 0; x < w; ++x) {
            const int sx = x * m.w / w;
            const float v = m.v[size_t(sy) * m.w + sx];
            out[size_t(y) * w + x] =
                hi > lo ? uint8_t(std::lround(255.0 * (v - lo) / (hi - lo))) : 128;
        }
    }
    return out;
}

void write_outputs(const std::filesystem::path& out_dir, const std::string& id,
                   const SampleOut& s) {
    std::filesystem::create_directories(out_dir);
    save_png(out_dir / (id + "_gen.png"), s.image);
    save_pgm(out_dir / (id + "_attn0.pgm"), heatmap_u8(s.attn0, s.image.h, s.image.w),
             s.image.h, s.image.w);
    save_pgm(out_dir / (id + "_attn1.pgm"), heatmap_u8(s.attn1, s.image.h, s.image.w),
             s.image.h, s.image.w);
}

} // namespace geoscene
