// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "simdet/errors.hpp"

namespace simdet {

// Axis-aligned detection box, continuous corner coordinates (no legacy
// +1 pixel convention).
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double score = 0;
    int cls = 0;

    void validate() const;
    double area() const { return (x2 - x1) * (y2 - y1); }
};

using BoxSet = std::vector<Box>;

double iou(const Box& a, const Box& b);

// Greedy hard NMS per class: keep the best-scoring box, suppress the
// rest with IoU strictly greater than the threshold. Ties in score break
// toward the lower original index. Returns kept indices into the input.
std::vector<size_t> nms_greedy(const BoxSet& boxes, double iou_thresh);

enum class SoftNmsMethod { Linear, Gaussian };

// Soft-NMS: decay overlapping scores instead of deleting boxes.
// linear: s *= (1-IoU) when IoU >= nt; gaussian: s *= exp(-IoU^2/sigma).
// Boxes falling below score_floor are dropped; output keeps decayed scores.
BoxSet nms_soft(const BoxSet& boxes, SoftNmsMethod method, double nt = 0.3, double sigma = 0.5,
                double score_floor = 0.001);

// Weighted NMS: each greedy cluster (IoU > thresh against its top box)
// fuses into one box with score-weighted average coordinates and the
// cluster's max score.
BoxSet nms_weighted(const BoxSet& boxes, double iou_thresh);

// CSV / JSON-lines IO for the CLI (columns x1,y1,x2,y2,score,class).
BoxSet read_boxes_csv(std::istream& is);
void write_boxes_csv(std::ostream& os, const BoxSet& boxes);
BoxSet read_boxes_jsonl(std::istream& is);
void write_boxes_jsonl(std::ostream& os, const BoxSet& boxes);

} // namespace simdet
