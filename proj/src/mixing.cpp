#include "mixing.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace dhm::mixing {

using nlohmann::json;

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::sd_only: return "sd_only";
        case Variant::ae: return "ae";
        case Variant::concat: return "concat";
        case Variant::sae_basic: return "sae_basic";
        case Variant::sae_gen_small: return "sae_gen_small";
        case Variant::sae_gen_large: return "sae_gen_large";
    }
    return "?";
}

Variant variant_from_int(int v) {
    require(v >= 1 && v <= 6, ErrorCode::config, "model variant must be 1..6");
    return static_cast<Variant>(v);
}

bool variant_trainable(Variant v) {
    return v == Variant::ae || v == Variant::sae_basic || v == Variant::sae_gen_small ||
           v == Variant::sae_gen_large;
}

bool variant_variational(Variant v) {
    return v == Variant::sae_gen_small || v == Variant::sae_gen_large;
}

int default_latent_dim(Variant v) {
    switch (v) {
        case Variant::ae:
        case Variant::sae_basic:
        case Variant::sae_gen_large: return 64;
        case Variant::sae_gen_small: return 8;
        default: return 0;
    }
}

std::vector<nn::Param*> MixingModel::generator_params() const {
    std::vector<nn::Param*> out;
    for (const auto& p : params.all()) {
        if (p->name.rfind("disc.", 0) == 0 || p->name.rfind("lpips.", 0) == 0) continue;
        out.push_back(p.get());
    }
    return out;
}

std::vector<nn::Param*> MixingModel::discriminator_params() const {
    std::vector<nn::Param*> out;
    for (const auto& p : params.all())
        if (p->name.rfind("disc.", 0) == 0) out.push_back(p.get());
    return out;
}

std::unique_ptr<MixingModel> make_mixing_model(const MixingConfig& config) {
    require(variant_trainable(config.variant), ErrorCode::invalid_argument,
            std::string("variant has no networks: ") + variant_name(config.variant));
    require(config.tile_size % 16 == 0, ErrorCode::config,
            "tile_size must be divisible by 16");
    require(config.latent_dim > 0, ErrorCode::config, "latent_dim must be positive");
    require(config.lambda >= 0.0 && config.lambda <= 1.0, ErrorCode::config,
            "lambda must lie in [0,1]");

    auto m = std::make_unique<MixingModel>();
    m->config = config;
    const int c0 = config.base_channels;
    const bool var = variant_variational(config.variant);
    Rng init(substream(config.seed, "init"));

    const int enc_ch[5] = {config.channels, c0, 2 * c0, 3 * c0, 4 * c0};
    for (int i = 0; i < 4; ++i)
        m->encoder.convs.push_back(nn::Conv2d::create(
            m->params, "enc.conv" + std::to_string(i), enc_ch[i], enc_ch[i + 1], 3, 2, 1, init));
    const int bottleneck_hw = config.tile_size / 16;
    const int flat = 4 * c0 * bottleneck_hw * bottleneck_hw;
    m->encoder.fc = nn::Dense::create(m->params, "enc.fc", flat,
                                      var ? 2 * config.latent_dim : config.latent_dim, init);

    m->decoder.bottleneck_ch = 4 * c0;
    m->decoder.bottleneck_hw = bottleneck_hw;
    m->decoder.fc = nn::Dense::create(m->params, "dec.fc", config.latent_dim, flat, init);
    const int dec_ch[4] = {4 * c0, 3 * c0, 2 * c0, c0};
    for (int i = 0; i < 3; ++i)
        m->decoder.convs.push_back(nn::Conv2d::create(
            m->params, "dec.conv" + std::to_string(i), dec_ch[i], dec_ch[i + 1], 3, 1, 1, init));
    m->decoder.out =
        nn::Conv2d::create(m->params, "dec.out", c0, config.channels, 3, 1, 1, init);

    m->supervision.h1 = nn::Dense::create(m->params, "sup.h1", config.latent_dim, 32, init);
    m->supervision.h2 = nn::Dense::create(m->params, "sup.h2", 32, config.sd_dim, init);

    const int disc_ch[4] = {config.channels, c0, 2 * c0, 2 * c0};
    for (int i = 0; i < 3; ++i)
        m->discriminator.convs.push_back(nn::Conv2d::create(
            m->params, "disc.conv" + std::to_string(i), disc_ch[i], disc_ch[i + 1], 3, 2, 1,
            init));
    const int disc_hw = config.tile_size / 8;
    m->discriminator.fc =
        nn::Dense::create(m->params, "disc.fc", 2 * c0 * disc_hw * disc_hw, 1, init);

    // Frozen random features standing in for a pretrained perceptual backbone.
    Rng ext_init(substream(config.seed, "extractor"));
    const int ext_ch[4] = {config.channels, 8, 16, 16};
    for (int i = 0; i < 3; ++i) {
        auto conv = nn::Conv2d::create(m->params, "lpips.conv" + std::to_string(i),
                                       ext_ch[i], ext_ch[i + 1], 3, 2, 1, ext_init);
        conv.w->trainable = false;
        conv.b->trainable = false;
        m->extractor.convs.push_back(conv);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Graph building.

namespace {
constexpr double kLeak = 0.2;

int flatten(ad::Graph& g, int x) {
    const Tensor& v = g.value(x);
    int n = v.dim(0);
    return ad::reshape(g, x, {n, static_cast<int>(v.numel() / n)});
}
}  // namespace

int encode_graph(const MixingModel& m, ad::Graph& g, nn::Binder& bind, int images) {
    const Tensor& v = g.value(images);
    require(v.rank() == 4 && v.dim(1) == m.config.channels &&
                v.dim(2) == m.config.tile_size && v.dim(3) == m.config.tile_size,
            ErrorCode::invalid_argument, "encode: image tensor shape mismatch");
    int h = images;
    for (const auto& conv : m.encoder.convs) h = ad::leaky_relu(g, conv.apply(g, bind, h), kLeak);
    return m.encoder.fc.apply(g, bind, flatten(g, h));
}

void split_variational(const MixingModel& m, ad::Graph& g, int enc_out, int* mean,
                       int* logvar) {
    if (variant_variational(m.config.variant)) {
        *mean = ad::slice_cols(g, enc_out, 0, m.config.latent_dim);
        *logvar = ad::slice_cols(g, enc_out, m.config.latent_dim, 2 * m.config.latent_dim);
    } else {
        *mean = enc_out;
        *logvar = -1;
    }
}

int decode_graph(const MixingModel& m, ad::Graph& g, nn::Binder& bind, int z) {
    const Tensor& v = g.value(z);
    require(v.rank() == 2 && v.dim(1) == m.config.latent_dim, ErrorCode::invalid_argument,
            "decode: latent shape mismatch");
    int h = ad::leaky_relu(g, m.decoder.fc.apply(g, bind, z), kLeak);
    h = ad::reshape(g, h,
                    {v.dim(0), m.decoder.bottleneck_ch, m.decoder.bottleneck_hw,
                     m.decoder.bottleneck_hw});
    for (const auto& conv : m.decoder.convs)
        h = ad::leaky_relu(g, conv.apply(g, bind, ad::upsample2x(g, h)), kLeak);
    h = m.decoder.out.apply(g, bind, ad::upsample2x(g, h));
    return ad::sigmoid(g, h);
}

int supervise_graph(const MixingModel& m, ad::Graph& g, nn::Binder& bind, int z) {
    int h = ad::tanh_op(g, m.supervision.h1.apply(g, bind, z));
    return m.supervision.h2.apply(g, bind, h);
}

int discriminate_graph(const MixingModel& m, ad::Graph& g, nn::Binder& bind, int images) {
    int h = images;
    for (const auto& conv : m.discriminator.convs)
        h = ad::leaky_relu(g, conv.apply(g, bind, h), kLeak);
    return m.discriminator.fc.apply(g, bind, flatten(g, h));
}

int loss_rec_graph(ad::Graph& g, int images, int recon) {
    return ad::sum_abs(g, ad::sub(g, images, recon));
}

int loss_sup_core_graph(ad::Graph& g, int x, int xhat) {
    return ad::sum_abs(g, ad::sub(g, x, xhat));
}

int loss_kl_graph(ad::Graph& g, int mean, int logvar) {
    int msq = ad::sum_sq(g, mean);
    int sexp = ad::sum(g, ad::exp_op(g, logvar));
    int slv = ad::sum(g, logvar);
    int acc = ad::add_scalars(g, {msq, sexp, slv}, {0.5, 0.5, -0.5});
    return ad::add_const(g, acc, -0.5 * static_cast<double>(g.value(mean).numel()));
}

int loss_lpips_graph(const MixingModel& m, ad::Graph& g, nn::Binder& bind, int images,
                     int recon) {
    require(g.value(images).shape == g.value(recon).shape, ErrorCode::invalid_argument,
            "loss_lpips: shape mismatch");
    std::vector<int> terms;
    std::vector<double> weights;
    int ha = images, hb = recon;
    for (const auto& conv : m.extractor.convs) {
        ha = ad::leaky_relu(g, conv.apply(g, bind, ha), kLeak);
        hb = ad::leaky_relu(g, conv.apply(g, bind, hb), kLeak);
        int na = ad::channel_l2_normalize(g, ha, 1e-10);
        int nb = ad::channel_l2_normalize(g, hb, 1e-10);
        int d = ad::sum_sq(g, ad::sub(g, na, nb));
        const Tensor& shape = g.value(ha);
        terms.push_back(d);
        weights.push_back(1.0 / (shape.dim(2) * shape.dim(3)));
    }
    return ad::add_scalars(g, terms, weights);
}

int loss_gan_g_graph(ad::Graph& g, int disc_scores_fake) {
    return ad::scale(g, ad::sum(g, disc_scores_fake), -1.0);
}

int loss_gan_d_graph(ad::Graph& g, int scores_real, int scores_fake) {
    int real_term = ad::sum(g, ad::relu(g, ad::add_const(g, scores_real, 1.0)));
    int fake_term = ad::sum(g, ad::relu(g, ad::add_const(g, ad::scale(g, scores_fake, -1.0), 1.0)));
    return ad::add_scalars(g, {real_term, fake_term}, {1.0, 1.0});
}

double adaptive_alpha(double grad_norm_rec, double grad_norm_other, double delta) {
    require(grad_norm_rec >= 0.0 && grad_norm_other >= 0.0, ErrorCode::invalid_argument,
            "adaptive_alpha: norms must be non-negative");
    double a = grad_norm_rec / (grad_norm_other + delta);
    return std::min(std::max(a, 0.0), 1e4);
}

// ---------------------------------------------------------------------------
// Plain-value wrappers.

double loss_rec(const Tensor& image, const Tensor& recon) {
    require(image.shape == recon.shape, ErrorCode::invalid_argument,
            "loss_rec: shape mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < image.numel(); ++i) s += std::fabs(image[i] - recon[i]);
    return s;
}

double loss_sup(const std::vector<double>& x, const std::vector<double>& xhat,
                double alpha_sup) {
    require(x.size() == xhat.size(), ErrorCode::invalid_argument, "loss_sup: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::fabs(x[i] - xhat[i]);
    return alpha_sup * s;
}

double loss_kl(const std::vector<double>& mean, const std::vector<double>& log_variance) {
    require(mean.size() == log_variance.size(), ErrorCode::invalid_argument,
            "loss_kl: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        require(std::isfinite(mean[i]) && std::isfinite(log_variance[i]),
                ErrorCode::invalid_argument, "loss_kl: non-finite input");
        s += mean[i] * mean[i] + std::exp(log_variance[i]) - 1.0 - log_variance[i];
    }
    return 0.5 * s;
}

double loss_gan_g(const std::vector<double>& disc_scores_fake) {
    double s = 0.0;
    for (double v : disc_scores_fake) s += v;
    return -s;
}

double loss_gan_d(const std::vector<double>& scores_real,
                  const std::vector<double>& scores_fake) {
    double s = 0.0;
    for (double v : scores_real) s += std::max(0.0, 1.0 + v);
    for (double v : scores_fake) s += std::max(0.0, 1.0 - v);
    return s;
}

double loss_perceptual(const MixingModel& m, const Tensor& image, const Tensor& recon) {
    ad::Graph g;
    nn::Binder bind(g);
    Tensor a = image, b = recon;
    if (a.rank() == 3) a.shape = {1, a.shape[0], a.shape[1], a.shape[2]};
    if (b.rank() == 3) b.shape = {1, b.shape[0], b.shape[1], b.shape[2]};
    int ia = g.input(std::move(a));
    int ib = g.input(std::move(b));
    return g.value(loss_lpips_graph(m, g, bind, ia, ib))[0];
}

// ---------------------------------------------------------------------------
// Composite loss and training.

namespace {

struct StepNodes {
    int images = -1, targets = -1, mean = -1, logvar = -1, z = -1, recon = -1, xhat = -1;
    int rec = -1, supcore = -1, kl = -1, lpips = -1, gan_g = -1, gan_d = -1, total = -1;
    double alpha_sup = 0.0, alpha_gan = 0.0;
};

double param_grad_norm(ad::Graph& g, nn::Binder& bind, nn::Param* p) {
    const Tensor* grad = bind.grad(p);
    return grad ? l2_norm(*grad) : 0.0;
}

StepNodes build_step_graph(MixingModel& m, const Batch& batch, ad::Graph& g,
                           nn::Binder& bind) {
    const Variant variant = m.config.variant;
    require(variant_trainable(variant), ErrorCode::invalid_argument,
            std::string("total_loss: variant has no training objective: ") +
                variant_name(variant));
    const double lambda = m.config.lambda;
    const int n = batch.images.dim(0);
    require(static_cast<int>(batch.x.size()) == n, ErrorCode::invalid_argument,
            "batch: one target row per image expected");

    StepNodes s;
    s.images = g.input(batch.images);
    int enc = encode_graph(m, g, bind, s.images);
    split_variational(m, g, enc, &s.mean, &s.logvar);
    if (variant_variational(variant)) {
        require(batch.noise.shape ==
                    std::vector<int>({n, m.config.latent_dim}),
                ErrorCode::invalid_argument, "batch: noise shape mismatch");
        int eps = g.input(batch.noise);
        int sd = ad::exp_op(g, ad::scale(g, s.logvar, 0.5));
        s.z = ad::add(g, s.mean, ad::mul(g, eps, sd));
    } else {
        s.z = s.mean;
    }
    s.recon = decode_graph(m, g, bind, s.z);
    s.rec = loss_rec_graph(g, s.images, s.recon);

    if (variant == Variant::ae) {
        s.total = s.rec;
        return s;
    }

    Tensor targets({n, m.config.sd_dim});
    for (int i = 0; i < n; ++i) {
        require(static_cast<int>(batch.x[static_cast<std::size_t>(i)].size()) ==
                    m.config.sd_dim,
                ErrorCode::invalid_argument, "batch: target dimension mismatch");
        for (int j = 0; j < m.config.sd_dim; ++j)
            targets[static_cast<std::int64_t>(i) * m.config.sd_dim + j] =
                batch.x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    s.targets = g.input(std::move(targets));
    s.xhat = supervise_graph(m, g, bind, s.z);
    s.supcore = loss_sup_core_graph(g, s.targets, s.xhat);

    // The adaptive supervision weight balances the two tasks where they meet:
    // gradient norms are taken at the final encoder layer, since the
    // supervision path never crosses the decoder.
    g.backward(s.rec);
    double rec_enc = param_grad_norm(g, bind, m.encoder.fc.w);
    double rec_dec = param_grad_norm(g, bind, m.decoder.out.w);
    g.backward(s.supcore);
    double sup_enc = param_grad_norm(g, bind, m.encoder.fc.w);
    s.alpha_sup = adaptive_alpha(rec_enc, sup_enc, m.config.delta);

    if (variant == Variant::sae_basic) {
        s.total = ad::add_scalars(g, {s.rec, s.supcore}, {1.0 - lambda, lambda * s.alpha_sup});
        return s;
    }

    s.kl = loss_kl_graph(g, s.mean, s.logvar);
    s.lpips = loss_lpips_graph(m, g, bind, s.images, s.recon);
    int scores_fake = discriminate_graph(m, g, bind, s.recon);
    int scores_real = discriminate_graph(m, g, bind, s.images);
    s.gan_g = loss_gan_g_graph(g, scores_fake);
    s.gan_d = loss_gan_d_graph(g, scores_real, scores_fake);

    g.backward(s.gan_g);
    double gan_dec = param_grad_norm(g, bind, m.decoder.out.w);
    s.alpha_gan = adaptive_alpha(rec_dec, gan_dec, m.config.delta);

    const double ae_w = 1.0 - lambda;
    s.total = ad::add_scalars(
        g, {s.rec, s.lpips, s.gan_g, s.kl, s.supcore},
        {ae_w * m.config.alpha_rec, ae_w * m.config.alpha_lpips, ae_w * s.alpha_gan,
         ae_w * m.config.alpha_kl, lambda * s.alpha_sup});
    return s;
}

LossBreakdown read_breakdown(const ad::Graph& g, const StepNodes& s, const MixingModel& m) {
    LossBreakdown b;
    auto val = [&](int id) { return id >= 0 ? g.value(id)[0] : 0.0; };
    b.total = val(s.total);
    b.rec = val(s.rec);
    b.sup_core = val(s.supcore);
    b.alpha_sup = s.alpha_sup;
    b.sup = s.alpha_sup * b.sup_core;
    b.kl = val(s.kl);
    b.lpips = val(s.lpips);
    b.gan_g = val(s.gan_g);
    b.gan_d = val(s.gan_d);
    b.alpha_gan_g = s.alpha_gan;
    (void)m;
    return b;
}

std::vector<std::string> term_names_for(Variant v) {
    switch (v) {
        case Variant::ae: return {"step", "l_rec", "total"};
        case Variant::sae_basic:
            return {"step", "l_rec", "l_sup_core", "alpha_sup", "l_sup", "total"};
        default:
            return {"step",  "l_rec",   "l_sup_core", "alpha_sup", "l_sup", "l_kl",
                    "l_lpips", "l_gan_g", "alpha_gan_g", "l_gan_d", "total"};
    }
}

}  // namespace

LossBreakdown total_loss(MixingModel& m, const Batch& batch) {
    ad::Graph g;
    nn::Binder bind(g);
    StepNodes s = build_step_graph(m, batch, g, bind);
    return read_breakdown(g, s, m);
}

Batch make_batch(const MixingModel& m, const World& world, const std::vector<int>& tile_ids,
                 Rng* noise_rng) {
    require(!tile_ids.empty(), ErrorCode::invalid_argument, "make_batch: empty batch");
    require(!m.sup_stats.mean.empty() || m.config.variant == Variant::ae,
            ErrorCode::state, "make_batch: supervision stats not fitted yet");
    const int n = static_cast<int>(tile_ids.size());
    Batch batch;
    batch.images = tiles_to_tensor(world, tile_ids);
    batch.x.resize(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
        const ImageTile& tile = world.tiles[static_cast<std::size_t>(tile_ids[static_cast<std::size_t>(b)])];
        int region = world.region_index(tile.region_id);
        std::vector<std::vector<double>> rows = {world.regions[static_cast<std::size_t>(region)].x_sd};
        if (!m.sup_stats.mean.empty()) dataio::standardize(rows, m.sup_stats);
        batch.x[static_cast<std::size_t>(b)] = rows.front();
    }
    if (variant_variational(m.config.variant)) {
        require(noise_rng != nullptr, ErrorCode::invalid_argument,
                "make_batch: variational variant needs a noise stream");
        batch.noise = Tensor({n, m.config.latent_dim});
        for (double& v : batch.noise.data) v = noise_rng->normal();
    }
    return batch;
}

LossBreakdown train_step(MixingModel& m, const Batch& batch, nn::Adam& opt_gen,
                         nn::Adam& opt_disc, bool generator_phase,
                         bool discriminator_phase) {
    const bool gan = variant_variational(m.config.variant);
    ad::Graph g;
    nn::Binder bind(g);
    StepNodes nodes = build_step_graph(m, batch, g, bind);
    LossBreakdown loss = read_breakdown(g, nodes, m);
    if (!std::isfinite(loss.total) || (gan && !std::isfinite(loss.gan_d)))
        fail_numeric("training diverged (total=" + std::to_string(loss.total) + ")");
    if (generator_phase) {
        g.backward(nodes.total);
        opt_gen.step(m.generator_params(), bind);
    }
    if (gan && discriminator_phase) {
        g.backward(nodes.gan_d);
        opt_disc.step(m.discriminator_params(), bind);
    }
    return loss;
}

TrainResult train_mixing(MixingModel& m, const World& world) {
    require(variant_trainable(m.config.variant), ErrorCode::invalid_argument,
            "train_mixing: variant is not trainable");
    require(!world.tiles.empty(), ErrorCode::invalid_argument, "train_mixing: no tiles");

    // Supervision targets: standardized region sociodemographics.
    std::vector<std::vector<double>> targets;
    for (const auto& r : world.regions) targets.push_back(r.x_sd);
    m.sup_stats = dataio::standardize(targets);

    const int T = static_cast<int>(world.tiles.size());
    const int batch_size = std::min(m.config.batch, T);
    Rng shuffle_rng(substream(m.config.seed, "shuffle"));
    Rng noise_rng(substream(m.config.seed, "vnoise"));
    std::vector<int> order(static_cast<std::size_t>(T));
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);
    std::size_t cursor = 0;

    nn::Adam opt_gen, opt_disc;
    opt_gen.lr = m.config.lr;
    opt_disc.lr = m.config.lr;

    TrainResult result;
    result.term_names = term_names_for(m.config.variant);
    for (int step = 0; step < m.config.steps; ++step) {
        std::vector<int> ids(static_cast<std::size_t>(batch_size));
        for (int b = 0; b < batch_size; ++b) {
            if (cursor >= order.size()) {
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            ids[static_cast<std::size_t>(b)] = order[cursor++];
        }
        Batch batch = make_batch(m, world, ids, &noise_rng);
        LossBreakdown loss;
        try {
            loss = train_step(m, batch, opt_gen, opt_disc);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::numeric)
                fail_numeric("step " + std::to_string(step) + ": " + e.what());
            throw;
        }
        result.history.push_back({step, loss});
    }
    m.trained_steps += m.config.steps;
    return result;
}

void write_loss_history(const TrainResult& r, const std::string& path) {
    CsvTable t;
    t.header = r.term_names;
    for (const auto& row : r.history) {
        std::vector<std::string> cells;
        for (const auto& name : r.term_names) {
            if (name == "step") cells.push_back(std::to_string(row.step));
            else if (name == "l_rec") cells.push_back(format_double(row.loss.rec));
            else if (name == "l_sup_core") cells.push_back(format_double(row.loss.sup_core));
            else if (name == "alpha_sup") cells.push_back(format_double(row.loss.alpha_sup));
            else if (name == "l_sup") cells.push_back(format_double(row.loss.sup));
            else if (name == "l_kl") cells.push_back(format_double(row.loss.kl));
            else if (name == "l_lpips") cells.push_back(format_double(row.loss.lpips));
            else if (name == "l_gan_g") cells.push_back(format_double(row.loss.gan_g));
            else if (name == "alpha_gan_g") cells.push_back(format_double(row.loss.alpha_gan_g));
            else if (name == "l_gan_d") cells.push_back(format_double(row.loss.gan_d));
            else cells.push_back(format_double(row.loss.total));
        }
        t.rows.push_back(std::move(cells));
    }
    write_csv(path, t);
}

// ---------------------------------------------------------------------------
// Inference.

Tensor tiles_to_tensor(const World& world, const std::vector<int>& tile_ids) {
    require(!tile_ids.empty(), ErrorCode::invalid_argument, "tiles_to_tensor: empty list");
    const ImageTile& first = world.tiles[static_cast<std::size_t>(tile_ids.front())];
    Tensor out({static_cast<int>(tile_ids.size()), first.channels, first.height, first.width});
    for (std::size_t b = 0; b < tile_ids.size(); ++b) {
        const ImageTile& tile = world.tiles[static_cast<std::size_t>(tile_ids[b])];
        require(tile.height == first.height && tile.width == first.width &&
                    tile.channels == first.channels,
                ErrorCode::invalid_argument, "tiles_to_tensor: inconsistent tile shapes");
        for (int c = 0; c < tile.channels; ++c)
            for (int y = 0; y < tile.height; ++y)
                for (int x = 0; x < tile.width; ++x)
                    out[((static_cast<std::int64_t>(b) * tile.channels + c) * tile.height + y) *
                            tile.width +
                        x] = tile.at(y, x, c);
    }
    return out;
}

predictor::DenseMatrix encode_tiles(const MixingModel& m, const World& world,
                                    const std::vector<int>& tile_ids) {
    predictor::DenseMatrix out(static_cast<int>(tile_ids.size()), m.config.latent_dim);
    const int chunk = 64;
    for (std::size_t start = 0; start < tile_ids.size(); start += chunk) {
        std::vector<int> part(tile_ids.begin() + static_cast<std::ptrdiff_t>(start),
                              tile_ids.begin() +
                                  static_cast<std::ptrdiff_t>(
                                      std::min(tile_ids.size(), start + chunk)));
        ad::Graph g;
        nn::Binder bind(g);
        int images = g.input(tiles_to_tensor(world, part));
        int enc = encode_graph(m, g, bind, images);
        int mean, logvar;
        split_variational(m, g, enc, &mean, &logvar);
        const Tensor& v = g.value(mean);
        for (std::size_t b = 0; b < part.size(); ++b)
            for (int j = 0; j < m.config.latent_dim; ++j)
                out.at(static_cast<int>(start + b), j) =
                    v[static_cast<std::int64_t>(b) * m.config.latent_dim + j];
    }
    return out;
}

ImageTile decode_latent(const MixingModel& m, const std::vector<double>& z) {
    require(static_cast<int>(z.size()) == m.config.latent_dim, ErrorCode::invalid_argument,
            "decode_latent: latent dimension mismatch");
    ad::Graph g;
    nn::Binder bind(g);
    Tensor zt({1, m.config.latent_dim});
    std::copy(z.begin(), z.end(), zt.data.begin());
    int recon = decode_graph(m, g, bind, g.input(std::move(zt)));
    const Tensor& v = g.value(recon);
    ImageTile tile;
    tile.channels = v.dim(1);
    tile.height = v.dim(2);
    tile.width = v.dim(3);
    tile.pixels.assign(static_cast<std::size_t>(v.numel()), 0.0);
    for (int c = 0; c < tile.channels; ++c)
        for (int y = 0; y < tile.height; ++y)
            for (int x = 0; x < tile.width; ++x)
                tile.at(y, x, c) = v[(static_cast<std::int64_t>(c) * tile.height + y) *
                                         tile.width +
                                     x];
    return tile;
}

std::vector<double> supervise_latent(const MixingModel& m, const std::vector<double>& z) {
    require(static_cast<int>(z.size()) == m.config.latent_dim, ErrorCode::invalid_argument,
            "supervise_latent: latent dimension mismatch");
    ad::Graph g;
    nn::Binder bind(g);
    Tensor zt({1, m.config.latent_dim});
    std::copy(z.begin(), z.end(), zt.data.begin());
    int out = supervise_graph(m, g, bind, g.input(std::move(zt)));
    const Tensor& v = g.value(out);
    return std::vector<double>(v.data.begin(), v.data.end());
}

std::vector<std::vector<double>> build_region_latents(Variant variant,
                                                      const MixingModel* model,
                                                      const World& world) {
    const std::size_t R = world.regions.size();
    auto encoded_means = [&]() {
        require(model != nullptr, ErrorCode::invalid_argument,
                "build_region_latents: trained model required");
        std::vector<std::vector<double>> z(R);
        for (std::size_t r = 0; r < R; ++r) {
            const auto& rec = world.regions[r];
            require(!rec.tile_ids.empty(), ErrorCode::invalid_argument,
                    "region has no tiles: " + rec.region_id);
            predictor::DenseMatrix enc = encode_tiles(*model, world, rec.tile_ids);
            std::vector<dataio::LatentVector> rows;
            for (int i = 0; i < enc.rows; ++i) rows.push_back(enc.row(i));
            z[r] = dataio::region_latent(rows);
        }
        return z;
    };

    switch (variant) {
        case Variant::sd_only: {
            std::vector<std::vector<double>> z;
            for (const auto& r : world.regions) z.push_back(r.x_sd);
            dataio::standardize(z);
            return z;
        }
        case Variant::ae:
        case Variant::sae_basic:
        case Variant::sae_gen_small:
        case Variant::sae_gen_large:
            return encoded_means();
        case Variant::concat: {
            std::vector<std::vector<double>> sd;
            for (const auto& r : world.regions) sd.push_back(r.x_sd);
            dataio::standardize(sd);
            auto ae = encoded_means();
            dataio::standardize(ae);
            for (std::size_t r = 0; r < R; ++r)
                sd[r].insert(sd[r].end(), ae[r].begin(), ae[r].end());
            return sd;
        }
    }
    fail_arg("unknown variant");
}

predictor::DenseMatrix trip_latents(const World& world,
                                    const std::vector<std::vector<double>>& region_latents) {
    require(region_latents.size() == world.regions.size(), ErrorCode::invalid_argument,
            "trip_latents: one latent per region expected");
    const int L = static_cast<int>(region_latents.front().size());
    predictor::DenseMatrix out(static_cast<int>(world.trips.size()), 2 * L);
    for (std::size_t n = 0; n < world.trips.size(); ++n) {
        int o = world.region_index(world.trips[n].origin);
        int d = world.region_index(world.trips[n].destination);
        for (int j = 0; j < L; ++j) {
            out.at(static_cast<int>(n), j) = region_latents[static_cast<std::size_t>(o)][static_cast<std::size_t>(j)];
            out.at(static_cast<int>(n), L + j) =
                region_latents[static_cast<std::size_t>(d)][static_cast<std::size_t>(j)];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: float32 parameter blocks plus a JSON manifest.

void save_checkpoint(const MixingModel& m, const std::string& path_prefix) {
    json manifest;
    manifest["variant"] = static_cast<int>(m.config.variant);
    manifest["latent_dim"] = m.config.latent_dim;
    manifest["lambda"] = m.config.lambda;
    manifest["tile_size"] = m.config.tile_size;
    manifest["channels"] = m.config.channels;
    manifest["sd_dim"] = m.config.sd_dim;
    manifest["base_channels"] = m.config.base_channels;
    manifest["steps"] = m.config.steps;
    manifest["batch"] = m.config.batch;
    manifest["lr"] = m.config.lr;
    manifest["seed"] = m.config.seed;
    manifest["trained_steps"] = m.trained_steps;
    manifest["sup_stats"] = {{"mean", m.sup_stats.mean}, {"sd", m.sup_stats.sd}};
    manifest["blocks"] = json::array();

    std::ofstream bin(path_prefix + ".bin", std::ios::binary);
    require(static_cast<bool>(bin), ErrorCode::io, "cannot write " + path_prefix + ".bin");
    std::size_t offset = 0;
    std::vector<float> buf;
    for (const auto& p : m.params.all()) {
        manifest["blocks"].push_back(
            {{"name", p->name}, {"shape", p->value.shape}, {"offset_bytes", offset}});
        buf.assign(p->value.data.begin(), p->value.data.end());
        bin.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
        offset += buf.size() * sizeof(float);
    }
    require(static_cast<bool>(bin), ErrorCode::io, "write failed: " + path_prefix + ".bin");
    std::ofstream js(path_prefix + ".json", std::ios::binary);
    js << manifest.dump(2) << "\n";
    require(static_cast<bool>(js), ErrorCode::io, "write failed: " + path_prefix + ".json");
}

std::unique_ptr<MixingModel> load_checkpoint(const std::string& path_prefix) {
    std::ifstream js(path_prefix + ".json");
    require(static_cast<bool>(js), ErrorCode::io, "cannot open " + path_prefix + ".json");
    json manifest = json::parse(js);
    MixingConfig config;
    config.variant = variant_from_int(manifest.at("variant").get<int>());
    config.latent_dim = manifest.at("latent_dim").get<int>();
    config.lambda = manifest.at("lambda").get<double>();
    config.tile_size = manifest.at("tile_size").get<int>();
    config.channels = manifest.at("channels").get<int>();
    config.sd_dim = manifest.at("sd_dim").get<int>();
    config.base_channels = manifest.at("base_channels").get<int>();
    config.steps = manifest.at("steps").get<int>();
    config.batch = manifest.at("batch").get<int>();
    config.lr = manifest.at("lr").get<double>();
    config.seed = manifest.at("seed").get<std::uint64_t>();
    auto m = make_mixing_model(config);
    m->trained_steps = manifest.at("trained_steps").get<int>();
    m->sup_stats.mean = manifest.at("sup_stats").at("mean").get<std::vector<double>>();
    m->sup_stats.sd = manifest.at("sup_stats").at("sd").get<std::vector<double>>();

    std::ifstream bin(path_prefix + ".bin", std::ios::binary);
    require(static_cast<bool>(bin), ErrorCode::io, "cannot open " + path_prefix + ".bin");
    for (const auto& block : manifest.at("blocks")) {
        std::string name = block.at("name").get<std::string>();
        auto shape = block.at("shape").get<std::vector<int>>();
        nn::Param* p = m->params.find(name);
        require(p != nullptr, ErrorCode::io, "checkpoint block unknown: " + name);
        require(p->value.shape == shape, ErrorCode::io, "checkpoint shape mismatch: " + name);
        std::vector<float> buf(static_cast<std::size_t>(p->value.numel()));
        bin.seekg(static_cast<std::streamoff>(block.at("offset_bytes").get<std::size_t>()));
        bin.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)));
        require(static_cast<std::size_t>(bin.gcount()) == buf.size() * sizeof(float),
                ErrorCode::io, "checkpoint truncated at block " + name);
        for (std::size_t i = 0; i < buf.size(); ++i)
            p->value[static_cast<std::int64_t>(i)] = static_cast<double>(buf[i]);
    }
    return m;
}

}  // namespace dhm::mixing
