#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "mgssl/data.hpp"
#include "mgssl/model.hpp"
#include "mgssl/rng.hpp"
#include "mgssl/tensor.hpp"

namespace mgssl {

struct LossWeights {
    double consistency = 1.0;   // lambda1
    double entropy = 0.1;       // lambda2
    double anchor = 1.0;        // lambda3
    double divergence = 1.0;    // lambda4
    double proto_clf = 0.1;     // lambda5
};

struct Margins {
    double margin_l = 0.1;
    double margin_a = 0.15;
    double margin_d = 0.75;
};

struct VatConfig {
    double eps = 0.5;   // perturbation norm per row
    double xi = 1e-6;   // probe scale for the power iteration
    int power_iters = 1;
};

enum class TrainStage { WarmUp, Full };

// --- individual terms -------------------------------------------------------

// Mean of -log p[label]; probabilities clamped at 1e-12 before the log.
Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels);

// Mean over rows of -sum_c p log p.
Tensor entropy_min(const Tensor& probs);

// Mean over rows of KL(clean || perturbed); the clean side carries no gradient.
Tensor consistency(Tape& tape, const Mat& probs_clean, const Tensor& probs_perturbed);

// Nearest class center under cosine similarity; ties go to the lowest index.
std::vector<int> pseudo_label(const Mat& features, const Mat& centers);

Tensor anchor_magnitude(const Tensor& centers, double l_avg, double margin_l);

// Exhaustive triplet enumeration is capped; beyond the cap a uniform
// subsample is drawn with the batch RNG (or replayed from `frozen`).
struct TripletSelection {
    std::vector<int> center, pos, neg;
    bool degenerate = false;  // fewer than two classes present
};
TripletSelection enumerate_triplets(const std::vector<int>& center_classes,
                                    const std::vector<int>& entity_labels, size_t cap, Rng* rng);
Tensor anchor_triplet(const Tensor& centers, const Tensor& entities,
                      const TripletSelection& sel, double margin_a);

Tensor anchor_boundary(const Tensor& centers, const Tensor& entities,
                       const std::vector<int>& entity_labels);

Tensor divergence(const Tensor& protos, const std::vector<int>& proto_labels, double l_avg,
                  double margin_d);

// Adversarial input direction: probe with xi-scaled random unit rows, take
// the KL gradient w.r.t. the probe, normalize each row to eps. Rows with a
// zero gradient fall back to their random direction. The result is detached.
Mat vat_direction(const std::function<Tensor(Tape&, const Tensor&)>& pipeline, const Mat& x,
                  const Mat& probs_clean, const VatConfig& cfg, Rng& rng);

// --- composition -------------------------------------------------------------

// Detached quantities of one evaluation. Freezing them makes the loss a
// smooth function of the parameters, which finite differences require;
// the analytic gradient is identical either way since all of these are
// gradient-detached by design.
struct FrozenContext {
    bool valid = false;
    Mat r_adv;                       // B_u x input_dim
    Mat probs_clean_u;               // detached clean predictions, B_u x C
    std::vector<int> pseudo_labels;  // unlabeled rows
    double l_avg_batch = 0;
    double l_avg_protos = 0;
    TripletSelection triplets;
};

struct LossBreakdown {
    double clf_i = 0, con = 0, em = 0;
    double mag = 0, ang = 0, bound = 0, div = 0, clf_p = 0;
    double total = 0;
};

struct TotalLossResult {
    Tensor total;
    LossBreakdown breakdown;
    FrozenContext context;
};

inline constexpr size_t kTripletCap = 20000;

TotalLossResult total_loss(Tape& tape, Model& model, const ModelTape& mt, const Batch& batch,
                           const LossWeights& weights, const Margins& margins,
                           const VatConfig& vat, TrainStage stage, Rng& rng,
                           const FrozenContext* frozen = nullptr);

}  // namespace mgssl
