#pragma once

#include <vector>

#include "volume.hpp"

namespace sacreg {

struct DiceResult {
    std::vector<std::pair<int, double>> per_label;  // labels present somewhere
    double mean = 0.0;  // over labels present in at least one volume
};

struct SurfaceResult {
    bool defined = false;  // label present in both volumes
    double hd95 = 0.0;     // mm
    double assd = 0.0;     // mm
};

struct MetricReport {
    DiceResult dice;
    double hd95 = 0.0;        // mean over defined labels, mm
    double assd = 0.0;        // mean over defined labels, mm
    double folding_pct = 0.0; // percentage of interior voxels with det(J) < 0
};

// Per-label 2|A∩B| / (|A|+|B|) over nonzero labels; labels absent from both
// volumes are skipped. Symmetric.
DiceResult dice(const Volume& a, const Volume& b,
                const std::vector<int>& label_set = {});

// Boundary voxels via 6-connectivity (out-of-bounds neighbors count as
// background); all pairwise distances in mm both directions. ASSD = mean of
// the two directed means; HD95 = 95th linear-interpolation percentile of the
// pooled bidirectional distances (symmetric by construction).
SurfaceResult surface_distances(const Volume& a, const Volume& b, int label,
                                const std::array<float, 3>& spacing);

// Percentage of interior voxels where the central-difference Jacobian of
// x + flow(x) has negative determinant.
double jacobian_folding(const DisplacementField& flow);

// Mean Euclidean distance between two fields, in voxels.
double endpoint_error(const DisplacementField& a, const DisplacementField& b);

MetricReport evaluate_case(const Volume& warped_labels, const Volume& fixed_labels,
                           const DisplacementField& flow);

}  // namespace sacreg
