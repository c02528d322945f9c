#include "model.hpp"

#include <cmath>

namespace sacreg {

namespace {

Tensor kaiming_leaf(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t = Tensor::leaf(std::move(shape), true);
    // Kaiming fan-in scaling with the LeakyReLU(0.1) gain
    const double std_dev = std::sqrt(2.0 / (1.0 + 0.01) / fan_in);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        t.data()[i] = static_cast<float>(rng.normal() * std_dev);
    }
    return t;
}

Tensor zeros_leaf(std::vector<int> shape) {
    return Tensor::leaf(std::move(shape), true);
}

Tensor const_leaf(std::vector<int> shape, float v) {
    Tensor t = Tensor::leaf(std::move(shape), true);
    std::fill(t.data(), t.data() + t.numel(), v);
    return t;
}

}  // namespace

RegistrationModel::RegistrationModel(const TrainConfig& cfg, uint64_t init_seed)
    : cfg_(cfg) {
    cfg_.validate();
    Rng rng(init_seed);
    auto reg = [&](const std::string& name, Tensor t) {
        params_.push_back({name, t});
        return t;
    };

    // encoder: one conv block per scale, shared between the two streams
    const int k = cfg_.encoder_kernel;
    encoder_.channels = cfg_.encoder_channels;
    encoder_.kernel_size = k;
    int cin = 1;
    for (int i = 0; i < 5; ++i) {
        const int cout = cfg_.encoder_channels[static_cast<std::size_t>(i)];
        const std::string p = "enc" + std::to_string(i + 1) + ".";
        ConvBlockParams b;
        b.kernel = reg(p + "kernel",
                       kaiming_leaf({cout, cin, k, k, k}, cin * k * k * k, rng));
        b.bias = reg(p + "bias", zeros_leaf({cout}));
        b.gamma = reg(p + "gamma", const_leaf({cout}, 1.0f));
        b.beta = reg(p + "beta", zeros_leaf({cout}));
        encoder_.blocks.push_back(b);
        cin = cout;
    }

    // SACB parameters per enabled scale (per stream unless shared). The MLP
    // output layers start at zero: modulation 1+tanh(0)=1 and bias 0 make the
    // block a plain residual convolution at initialization.
    for (int s = 2; s <= 5; ++s) {
        sacb_index_[s - 2][0] = -1;
        sacb_index_[s - 2][1] = -1;
    }
    const int mk = cfg_.match_window;
    const int mk3 = mk * mk * mk;
    for (int s = 2; s <= 5; ++s) {
        if (!cfg_.sacb_enabled(s)) continue;
        const int streams = cfg_.sacb_share_streams ? 1 : 2;
        for (int st = 0; st < streams; ++st) {
            const int c = cfg_.encoder_channels[static_cast<std::size_t>(s - 1)];
            const int hidden = 4 * c;
            std::string p = "sacb" + std::to_string(s) + ".";
            if (streams == 2) p += (st == 0 ? "f." : "m.");
            SacbParams sp;
            sp.k = mk;
            sp.w = reg(p + "w", kaiming_leaf({c, c, mk3}, c * mk3, rng));
            sp.fw_w1 = reg(p + "fw1.weight", kaiming_leaf({hidden, c}, c, rng));
            sp.fw_b1 = reg(p + "fw1.bias", zeros_leaf({hidden}));
            sp.fw_w2 = reg(p + "fw2.weight", zeros_leaf({c * c * mk3, hidden}));
            sp.fw_b2 = reg(p + "fw2.bias", zeros_leaf({c * c * mk3}));
            sp.fb_w1 = reg(p + "fb1.weight", kaiming_leaf({hidden, c}, c, rng));
            sp.fb_b1 = reg(p + "fb1.bias", zeros_leaf({hidden}));
            sp.fb_w2 = reg(p + "fb2.weight", zeros_leaf({c, hidden}));
            sp.fb_b2 = reg(p + "fb2.bias", zeros_leaf({c}));
            const int idx = static_cast<int>(sacb_.size());
            sacb_.push_back(sp);
            sacb_index_[s - 2][st] = idx;
            if (streams == 1) sacb_index_[s - 2][1] = idx;
        }
    }

    // final-scale conv head; the output layer is zero-initialized so the
    // initial residual flow at scale 1 is exactly zero
    const int c1 = cfg_.encoder_channels[0];
    const int hidden = 2 * c1;
    head_.k1 = reg("head.conv1.kernel",
                   kaiming_leaf({hidden, 2 * c1, 3, 3, 3}, 2 * c1 * 27, rng));
    head_.b1 = reg("head.conv1.bias", zeros_leaf({hidden}));
    head_.k2 = reg("head.conv2.kernel", zeros_leaf({3, hidden, 3, 3, 3}));
    head_.b2 = reg("head.conv2.bias", zeros_leaf({3}));
}

const SacbParams* RegistrationModel::sacb_for(int scale, int stream) const {
    const int idx = sacb_index_[scale - 2][stream];
    return idx < 0 ? nullptr : &sacb_[static_cast<std::size_t>(idx)];
}

Tensor RegistrationModel::refine(const Tensor& f, int scale, int stream) const {
    const SacbParams* p = sacb_for(scale, stream);
    if (!p) return f;
    SacbConfig sc;
    sc.clusters = cfg_.sacb_clusters;
    sc.mode = cfg_.sacb_mode;
    sc.kmeans_max_iter = cfg_.sacb_kmeans_max_iter;
    sc.kmeans_tol = cfg_.sacb_kmeans_tol;
    sc.detach_centroids = cfg_.sacb_detach_centroids;
    // a fixed per-(scale, stream) stream keeps clustering deterministic
    const uint64_t seed =
        cfg_.seed * 1000003ull + static_cast<uint64_t>(scale) * 17ull +
        static_cast<uint64_t>(stream);
    return sacb_forward(f, *p, sc, seed);
}

PyramidResult RegistrationModel::register_pair(const Tensor& moving,
                                               const Tensor& fixed) const {
    check(moving.shape() == fixed.shape(),
          "register_pair: volumes must share extents, " +
              shape_str(moving.shape()) + " vs " + shape_str(fixed.shape()));
    FeaturePyramid pm = encode(moving, encoder_);
    FeaturePyramid pf = encode(fixed, encoder_);
    const int k = cfg_.match_window;
    Tensor grid = relative_grid<float>(k);

    PyramidResult res;
    auto record = [&res](int level, const Tensor& delta) {
        ScaleDiagnostic d;
        d.level = level;
        const std::size_t m = delta.numel() / 3;
        const float* v = delta.data();
        double acc = 0.0, worst = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double n2 = static_cast<double>(v[i]) * v[i] +
                              static_cast<double>(v[m + i]) * v[m + i] +
                              static_cast<double>(v[2 * m + i]) * v[2 * m + i];
            acc += std::sqrt(n2);
            worst = std::max(worst, n2);
        }
        d.mean_norm = acc / static_cast<double>(m);
        d.max_norm = std::sqrt(worst);
        res.diagnostics.push_back(d);
    };

    // coarsest scale: match the two refined feature maps directly
    Tensor flow;
    {
        const Tensor& ff = pf.levels[4];
        const Tensor& fm = pm.levels[4];
        Tensor scores = similarity_scores(refine(ff, 5, 0), refine(fm, 5, 1), k);
        flow = flow_from_scores(scores, grid, ff.dim(1), ff.dim(2), ff.dim(3));
        record(5, flow);
    }

    // scales 4..2: upsample, warp the moving features, refine, match, compose
    for (int s = 4; s >= 2; --s) {
        const Tensor& ff = pf.levels[static_cast<std::size_t>(s - 1)];
        const Tensor& fm = pm.levels[static_cast<std::size_t>(s - 1)];
        Tensor phi_hat = upsample_flow2x(flow);
        Tensor fm_w = warp(fm, phi_hat);
        Tensor scores = similarity_scores(refine(ff, s, 0), refine(fm_w, s, 1), k);
        Tensor delta = flow_from_scores(scores, grid, ff.dim(1), ff.dim(2), ff.dim(3));
        record(s, delta);
        flow = compose(phi_hat, delta);
    }

    // full resolution: two-layer conv head instead of matching
    {
        const Tensor& ff = pf.levels[0];
        const Tensor& fm = pm.levels[0];
        Tensor phi_hat = upsample_flow2x(flow);
        Tensor fm_w = warp(fm, phi_hat);
        Tensor delta = conv_flow_head(ff, fm_w, head_);
        record(1, delta);
        flow = compose(phi_hat, delta);
    }
    res.flow = flow;
    return res;
}

}  // namespace sacreg
