#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "dataio.hpp"
#include "nn.hpp"
#include "predictor.hpp"
#include "types.hpp"

namespace dhm::mixing {

// Numbering follows the six-model design table.
enum class Variant : int {
    sd_only = 1,
    ae = 2,
    concat = 3,
    sae_basic = 4,
    sae_gen_small = 5,
    sae_gen_large = 6,
};

const char* variant_name(Variant v);
Variant variant_from_int(int v);
bool variant_trainable(Variant v);   // has networks to train
bool variant_variational(Variant v); // carries the KL head
int default_latent_dim(Variant v);

struct MixingConfig {
    Variant variant = Variant::sae_basic;
    int latent_dim = 64;
    double lambda = 0.7;
    int tile_size = 32;
    int channels = 3;
    int sd_dim = 10;
    int base_channels = 16;
    int steps = 400;
    int batch = 16;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    // Fixed loss weights and the stability offset of the adaptive ratios.
    double alpha_rec = 1.0;
    double alpha_kl = 1e-6;
    double alpha_lpips = 1.0;
    double delta = 1e-6;
};

struct EncoderNet {
    std::vector<nn::Conv2d> convs;
    nn::Dense fc;  // -> latent (deterministic) or 2*latent (variational)
};
struct DecoderNet {
    nn::Dense fc;  // latent -> bottleneck map
    std::vector<nn::Conv2d> convs;
    nn::Conv2d out;
    int bottleneck_ch = 0;
    int bottleneck_hw = 0;
};
struct SupervisionNet {
    nn::Dense h1;
    nn::Dense h2;
};
struct DiscriminatorNet {
    std::vector<nn::Conv2d> convs;
    nn::Dense fc;
};
struct PerceptualExtractor {
    std::vector<nn::Conv2d> convs;  // frozen random features
};

struct MixingModel {
    MixingConfig config;
    nn::ParamStore params;
    EncoderNet encoder;
    DecoderNet decoder;
    SupervisionNet supervision;
    DiscriminatorNet discriminator;
    PerceptualExtractor extractor;
    dataio::StandardizeStats sup_stats;  // target standardization used in training
    int trained_steps = 0;

    std::vector<nn::Param*> generator_params() const;      // encoder+decoder+supervision
    std::vector<nn::Param*> discriminator_params() const;
};

// Builds the networks for a trainable variant (errors on sd_only / concat).
std::unique_ptr<MixingModel> make_mixing_model(const MixingConfig& config);

// --- graph-building blocks (shared by training, inference and grad checks) ---
int encode_graph(const MixingModel& m, ad::Graph& g, nn::Binder& bind, int images);
// Splits the encoder output into (mean, logvar); logvar is -1 for
// deterministic variants (unused).
void split_variational(const MixingModel& m, ad::Graph& g, int enc_out, int* mean,
                       int* logvar);
int decode_graph(const MixingModel& m, ad::Graph& g, nn::Binder& bind, int z);
int supervise_graph(const MixingModel& m, ad::Graph& g, nn::Binder& bind, int z);
int discriminate_graph(const MixingModel& m, ad::Graph& g, nn::Binder& bind, int images);

int loss_rec_graph(ad::Graph& g, int images, int recon);
int loss_sup_core_graph(ad::Graph& g, int x, int xhat);
int loss_kl_graph(ad::Graph& g, int mean, int logvar);
int loss_lpips_graph(const MixingModel& m, ad::Graph& g, nn::Binder& bind, int images,
                     int recon);
int loss_gan_g_graph(ad::Graph& g, int disc_scores_fake);
int loss_gan_d_graph(ad::Graph& g, int scores_real, int scores_fake);

// --- plain-value loss entry points (thin wrappers over the graph ops) ---
double loss_rec(const Tensor& image, const Tensor& recon);
double loss_sup(const std::vector<double>& x, const std::vector<double>& xhat,
                double alpha_sup);
double loss_kl(const std::vector<double>& mean, const std::vector<double>& log_variance);
double loss_gan_g(const std::vector<double>& disc_scores_fake);
double loss_gan_d(const std::vector<double>& scores_real,
                  const std::vector<double>& scores_fake);
double loss_perceptual(const MixingModel& m, const Tensor& image, const Tensor& recon);

// Ratio of gradient norms, clamped to [0, 1e4].
double adaptive_alpha(double grad_norm_rec, double grad_norm_other, double delta);

struct LossBreakdown {
    double total = 0.0;
    double rec = 0.0;
    double sup_core = 0.0;  // sum |x - xhat| before weighting
    double sup = 0.0;       // alpha_sup * sup_core
    double kl = 0.0;
    double lpips = 0.0;
    double gan_g = 0.0;
    double gan_d = 0.0;
    double alpha_sup = 0.0;
    double alpha_gan_g = 0.0;
};

struct Batch {
    Tensor images;                        // [N,C,H,W]
    std::vector<std::vector<double>> x;   // supervision targets, standardized
    Tensor noise;                         // [N,latent] sampling noise (variational)
};

// Full composite loss of one batch (no parameter update).
LossBreakdown total_loss(MixingModel& m, const Batch& batch);

struct TrainLogRow {
    int step = 0;
    LossBreakdown loss;
};

struct TrainResult {
    std::vector<TrainLogRow> history;
    std::vector<std::string> term_names;  // csv column layout for the variant
};

// One optimization step on a prepared batch. The two phases can be toggled so
// the freeze contract (generator step leaves the discriminator untouched and
// vice versa) stays directly testable.
LossBreakdown train_step(MixingModel& m, const Batch& batch, nn::Adam& opt_gen,
                         nn::Adam& opt_disc, bool generator_phase = true,
                         bool discriminator_phase = true);

TrainResult train_mixing(MixingModel& m, const World& world);
void write_loss_history(const TrainResult& r, const std::string& path);

// Assembles a training batch for the given tile ids (targets standardized
// with the model's stored stats; noise drawn from `noise_rng` when needed).
Batch make_batch(const MixingModel& m, const World& world, const std::vector<int>& tile_ids,
                 Rng* noise_rng);

// --- inference ---
Tensor tiles_to_tensor(const World& world, const std::vector<int>& tile_ids);
predictor::DenseMatrix encode_tiles(const MixingModel& m, const World& world,
                                    const std::vector<int>& tile_ids);  // latent means
ImageTile decode_latent(const MixingModel& m, const std::vector<double>& z);
std::vector<double> supervise_latent(const MixingModel& m, const std::vector<double>& z);

// Region latents for any variant. `model` may be null for sd_only; concat
// needs the trained autoencoder of the plain-AE variant.
std::vector<std::vector<double>> build_region_latents(Variant variant,
                                                      const MixingModel* model,
                                                      const World& world);
// [z_origin, z_destination] per trip from region latents.
predictor::DenseMatrix trip_latents(const World& world,
                                    const std::vector<std::vector<double>>& region_latents);

void save_checkpoint(const MixingModel& m, const std::string& path_prefix);
std::unique_ptr<MixingModel> load_checkpoint(const std::string& path_prefix);

}  // namespace dhm::mixing
