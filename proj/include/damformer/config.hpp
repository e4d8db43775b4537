#pragma once

#include <filesystem>
#include <string>

#include "damformer/data.hpp"
#include "damformer/losses.hpp"
#include "damformer/model.hpp"
#include "damformer/optim.hpp"

namespace damformer {

// Everything a run needs, serializable to the flat `key = value` text format
// ('#' starts a comment, unknown keys are errors). Round-trips losslessly.
struct RunConfig {
    uint64_t seed = 42;
    int threads = 1;
    std::string out_dir = "runs/default";
    bool check_finite = false;

    ModelConfig model;
    LossConfig loss;
    OptimizerConfig opt;

    std::string data_source = "synth";  // synth | dir
    std::string data_dir;
    SynthConfig synth;
    int train_count = 200;
    int eval_count = 50;
    bool eval_on_train = false;  // evaluate on the training samples themselves

    void validate() const;

    static RunConfig parse(const std::string& text);
    static RunConfig from_file(const std::filesystem::path& path);
    std::string to_text() const;

    // Shipped presets (mirrored by the files under configs/).
    static RunConfig overfit_preset();
    static RunConfig gradcheck_preset();
};

}  // namespace damformer
