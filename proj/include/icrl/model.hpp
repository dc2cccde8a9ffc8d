#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icrl/dataset.hpp"
#include "icrl/rng.hpp"

namespace icrl::model {

struct ModelConfig {
    int d_model = 64;
    int n_layers = 4;
    int n_heads = 4;
    int max_context = 400;  // K
    int state_vocab = 81;
    int n_actions = 5;
    // When > 0, states are grid cells of this side length and the token adds
    // shared row/column embeddings on top of the per-cell one. Gridworld
    // policies then generalize across goal positions instead of memorizing
    // per-cell behavior.
    int coord_grid = 0;
    bool value_head = false;
    bool value_input = false;
    double dropout = 0.0;
    uint64_t rng_seed = 0;
};

struct TensorSpec {
    std::string name;
    int rows = 0;
    int cols = 0;
    size_t offset = 0;

    size_t size() const { return static_cast<size_t>(rows) * cols; }
};

// Offsets of every parameter tensor inside the flat vector.
struct ParamLayout {
    struct Layer {
        size_t ln1_g, ln1_b;
        size_t wq, bq, wk, bk, wv, bv, wo, bo;
        size_t ln2_g, ln2_b;
        size_t w1, b1, w2, b2;
    };
    size_t state_emb = 0;
    size_t col_emb = 0;  // only when coord_grid > 0
    size_t row_emb = 0;
    size_t action_emb = 0;  // n_actions+1 rows; last row is the null prev-action
    size_t reward_proj = 0;
    size_t null_reward = 0;
    size_t vhat_proj = 0;  // only when value_input
    size_t pos_emb = 0;
    std::vector<Layer> layers;
    size_t lnf_g = 0, lnf_b = 0;
    size_t act_w = 0, act_b = 0;
    size_t val_w = 0, val_b = 0;  // only when value_head
    size_t total = 0;

    std::vector<TensorSpec> tensors;  // serialization view of the same layout
};

ParamLayout make_layout(const ModelConfig& config);

namespace detail {
// Polynomial exp used by the attention softmax; exposed for accuracy tests.
double fast_exp(double x);
}  // namespace detail

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

struct OptimizerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0;  // global norm; <=0 disables
    int warmup_steps = 100;
    int total_steps = 0;  // 0 = constant lr after warmup
    double min_lr_frac = 0.1;
};

struct Model {
    ModelConfig config;
    ParamLayout layout;
    std::vector<double> params;
    AdamState adam;
};

Model make_model(const ModelConfig& config);

struct ForwardOutput {
    int seq_len = 0;
    int n_layers = 0;
    std::vector<double> action_logits;  // [T x n_actions]
    std::vector<double> value_pred;     // [T] when value_head
    // Per-layer attention, filled on request:
    // attention[((l*H + h)*T + t)*T + u], zero for u > t.
    std::vector<double> attention;

    // Row view for one (layer, head, query) triple.
    const double* attention_row(int layer, int head, int t, int n_heads) const {
        return attention.data() +
               ((static_cast<size_t>(layer) * n_heads + head) * seq_len + t) * seq_len;
    }
};

// Input tokens for a window: position t carries (s_t, v_hat_t?, a_{t-1}, r_{t-1});
// position 0 uses the learned null action/reward slots.
std::vector<double> token_compose(const Model& m, const data::TrainingWindow& window);

ForwardOutput forward(const Model& m, const data::TrainingWindow& window,
                      bool want_attention = false);

struct LossBreakdown {
    double total = 0.0;
    double action_ce = 0.0;
    double value_mse = 0.0;
    long n_tokens = 0;
};

// Mean token cross-entropy (+ lambda_value * mean squared value error) over
// the batch, with analytic gradients accumulated into grad (same layout as
// params). Per-window gradients are summed in window order so the result is
// independent of any parallel scheduling upstream. dropout_rng enables
// dropout when config.dropout > 0.
LossBreakdown loss_and_grad(const Model& m, const std::vector<data::TrainingWindow>& batch,
                            double lambda_value, std::vector<double>& grad,
                            Rng* dropout_rng = nullptr);

// Loss only (used by the finite-difference oracle in tests).
LossBreakdown loss_only(const Model& m, const std::vector<data::TrainingWindow>& batch,
                        double lambda_value);

// Adam with bias correction; lr follows linear warmup + cosine decay.
double lr_at(const OptimizerConfig& opt, long step);
void optimizer_step(Model& m, const std::vector<double>& grad, const OptimizerConfig& opt);

// Final-layer head-averaged attention as CSV rows (K x K, zeros above the
// diagonal).
std::string attention_csv(const ForwardOutput& out, int n_heads);
void export_attention(const Model& m, const data::TrainingWindow& window,
                      const std::string& csv_path);

// Incremental decoding with per-layer KV caches. Logits match forward() on
// the same token sequence.
class DecodeState {
  public:
    explicit DecodeState(const Model& m);

    void reset();
    int length() const { return len_; }

    struct TokenInput {
        int state = 0;
        std::optional<double> v_hat;        // required iff config.value_input
        std::optional<int> prev_action;     // empty -> null slot (window start)
        std::optional<double> prev_reward;  // empty -> null slot
    };

    struct StepOutput {
        std::vector<double> action_logits;  // [n_actions]
        double value_pred = 0.0;            // when value_head
    };

    // Appends one token at position length() and returns the heads' outputs.
    StepOutput push_token(const TokenInput& input);
    // Forgets the most recent token (used to re-enter a corrected v_hat).
    void pop_token();

  private:
    const Model& m_;
    int len_ = 0;
    std::vector<double> k_cache_;  // [layer][K][d]
    std::vector<double> v_cache_;
    std::vector<double> x_, scratch_, q_, att_;
};

// Checkpoint: manifest.json (config + tensor table) next to a flat
// little-endian f64 blob with a CRC-32 footer.
void save_checkpoint(const Model& m, const std::string& dir);
Model load_checkpoint(const std::string& dir);

}  // namespace icrl::model
