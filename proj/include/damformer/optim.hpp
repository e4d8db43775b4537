#pragma once

#include "damformer/layers.hpp"

namespace damformer {

struct OptimizerConfig {
    double lr = 6e-5;
    double weight_decay = 5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int steps = 3000;
    int batch_size = 2;
    double clip_norm = 0.0;    // 0 disables gradient clipping
    double stop_loss = 0.0;    // 0 disables early stopping
    int checkpoint_every = 0;  // 0 writes only the final checkpoint

    void validate() const;
};

// AdamW with decoupled weight decay:
//   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
//   theta <- theta - lr * m^ / (sqrt(v^) + eps) - lr * wd * theta
// Moment state and update arithmetic run in f64 regardless of the parameter
// dtype; the result is cast back on write.
class AdamW {
  public:
    AdamW(ParamList params, const OptimizerConfig& cfg);

    // One update over all parameters. Non-finite gradients abort with the
    // parameter's name; warn mode downgrades to a warning and skips that
    // parameter's update.
    void step();
    void zero_grad();

    int64_t timestep() const { return t_; }
    void set_warn_on_nonfinite(bool on) { warn_ = on; }

  private:
    ParamList params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int64_t t_ = 0;
    bool warn_ = false;
};

}  // namespace damformer
