#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clustering.hpp"

namespace sacreg {

// Training/experiment configuration. File format: UTF-8 key=value lines with
// dotted section keys (e.g. "sacb.clusters = 7") and '#' comments.
struct TrainConfig {
    double lr = 1e-4;
    int iterations = 300;
    double lambda = 1.0;
    uint64_t seed = 1;

    std::vector<int> encoder_channels{8, 16, 16, 32, 32};
    int encoder_kernel = 3;

    std::vector<int> sacb_scales{2, 3, 4, 5};
    int sacb_clusters = 7;
    ContextMode sacb_mode = ContextMode::spatial;
    bool sacb_share_streams = true;
    int sacb_kmeans_max_iter = 25;
    double sacb_kmeans_tol = 1e-4;
    bool sacb_detach_centroids = false;

    int match_window = 3;

    int ncc_window = 9;
    bool ncc_mean = false;

    // data source: synthetic unless data_dir is set
    std::string data_dir;
    uint64_t synth_seed = 7;
    int synth_size = 48;
    double synth_max_disp = 4.0;
    double synth_sigma = 3.0;

    std::string checkpoint_path = "checkpoint.sack";
    int checkpoint_every = 0;  // 0: final only
    std::string trace_path = "loss_trace.csv";

    void validate() const;
    bool sacb_enabled(int scale) const;

    // round-trippable snapshot embedded in checkpoints
    std::string serialize() const;
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config(const std::string& path);

}  // namespace sacreg
