// SPDX-License-Identifier: Apache-2.0
#include "simdet/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace simdet {

void Box::validate() const {
    if (x2 < x1 || y2 < y1) throw ParamError("box with negative extent");
    if (score < 0.0 || score > 1.0 || !std::isfinite(score)) throw ParamError("box score outside [0,1]");
}

double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

void validate_all(const BoxSet& boxes) {
    for (const Box& b : boxes) b.validate();
}

std::map<int, std::vector<size_t>> by_class(const BoxSet& boxes) {
    std::map<int, std::vector<size_t>> out;
    for (size_t i = 0; i < boxes.size(); ++i) out[boxes[i].cls].push_back(i);
    return out;
}

// score desc, original index asc
void sort_candidates(const BoxSet& boxes, std::vector<size_t>& idx) {
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return boxes[a].score > boxes[b].score; });
}

} // namespace

std::vector<size_t> nms_greedy(const BoxSet& boxes, double iou_thresh) {
    if (iou_thresh < 0.0 || iou_thresh > 1.0) throw ParamError("iou threshold outside [0,1]");
    validate_all(boxes);
    std::vector<size_t> kept;
    for (auto& [cls, idx] : by_class(boxes)) {
        sort_candidates(boxes, idx);
        std::vector<bool> dead(idx.size(), false);
        for (size_t i = 0; i < idx.size(); ++i) {
            if (dead[i]) continue;
            kept.push_back(idx[i]);
            for (size_t j = i + 1; j < idx.size(); ++j) {
                if (!dead[j] && iou(boxes[idx[i]], boxes[idx[j]]) > iou_thresh) dead[j] = true;
            }
        }
    }
    return kept;
}

BoxSet nms_soft(const BoxSet& boxes, SoftNmsMethod method, double nt, double sigma, double score_floor) {
    if (method == SoftNmsMethod::Gaussian && sigma <= 0.0) throw ParamError("soft-nms sigma must be > 0");
    if (nt < 0.0 || nt > 1.0) throw ParamError("soft-nms Nt outside [0,1]");
    validate_all(boxes);
    BoxSet out;
    for (auto& [cls, idx] : by_class(boxes)) {
        std::vector<double> score(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) score[i] = boxes[idx[i]].score;
        std::vector<bool> done(idx.size(), false);
        for (;;) {
            // current max by (decayed score desc, original index asc)
            size_t best = idx.size();
            for (size_t i = 0; i < idx.size(); ++i) {
                if (done[i]) continue;
                if (best == idx.size() || score[i] > score[best] ||
                    (score[i] == score[best] && idx[i] < idx[best])) {
                    best = i;
                }
            }
            if (best == idx.size()) break;
            done[best] = true;
            Box b = boxes[idx[best]];
            b.score = score[best];
            out.push_back(b);
            for (size_t j = 0; j < idx.size(); ++j) {
                if (done[j]) continue;
                const double ov = iou(boxes[idx[best]], boxes[idx[j]]);
                if (method == SoftNmsMethod::Linear) {
                    if (ov >= nt) score[j] *= (1.0 - ov);
                } else {
                    score[j] *= std::exp(-(ov * ov) / sigma);
                }
                if (score[j] < score_floor) done[j] = true; // dropped
            }
        }
    }
    return out;
}

BoxSet nms_weighted(const BoxSet& boxes, double iou_thresh) {
    if (iou_thresh < 0.0 || iou_thresh > 1.0) throw ParamError("iou threshold outside [0,1]");
    validate_all(boxes);
    BoxSet out;
    for (auto& [cls, idx] : by_class(boxes)) {
        sort_candidates(boxes, idx);
        std::vector<bool> used(idx.size(), false);
        for (size_t i = 0; i < idx.size(); ++i) {
            if (used[i]) continue;
            used[i] = true;
            std::vector<size_t> cluster{idx[i]};
            for (size_t j = i + 1; j < idx.size(); ++j) {
                if (!used[j] && iou(boxes[idx[i]], boxes[idx[j]]) > iou_thresh) {
                    used[j] = true;
                    cluster.push_back(idx[j]);
                }
            }
            Box fused;
            fused.cls = cls;
            fused.score = boxes[idx[i]].score; // cluster max
            double wsum = 0.0, x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
            for (size_t m : cluster) {
                const Box& b = boxes[m];
                wsum += b.score;
                x1 += b.x1 * b.score;
                y1 += b.y1 * b.score;
                x2 += b.x2 * b.score;
                y2 += b.y2 * b.score;
            }
            fused.x1 = x1 / wsum;
            fused.y1 = y1 / wsum;
            fused.x2 = x2 / wsum;
            fused.y2 = y2 / wsum;
            out.push_back(fused);
        }
    }
    return out;
}

// ---- IO ----

BoxSet read_boxes_csv(std::istream& is) {
    BoxSet out;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first && line.find("x1") != std::string::npos) {
            first = false;
            continue; // header
        }
        first = false;
        std::istringstream ls(line);
        Box b;
        char comma;
        if (!(ls >> b.x1 >> comma >> b.y1 >> comma >> b.x2 >> comma >> b.y2 >> comma >> b.score >> comma >> b.cls)) {
            throw FormatError("bad box CSV row: " + line);
        }
        b.validate();
        out.push_back(b);
    }
    return out;
}

void write_boxes_csv(std::ostream& os, const BoxSet& boxes) {
    os << "x1,y1,x2,y2,score,class\n";
    os.precision(10);
    for (const Box& b : boxes) {
        os << b.x1 << ',' << b.y1 << ',' << b.x2 << ',' << b.y2 << ',' << b.score << ',' << b.cls << '\n';
    }
}

BoxSet read_boxes_jsonl(std::istream& is) {
    BoxSet out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        Box b;
        try {
            const auto j = nlohmann::json::parse(line);
            b.x1 = j.at("x1").get<double>();
            b.y1 = j.at("y1").get<double>();
            b.x2 = j.at("x2").get<double>();
            b.y2 = j.at("y2").get<double>();
            b.score = j.at("score").get<double>();
            b.cls = j.at("class").get<int>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("bad box JSON line: " + std::string(e.what()));
        }
        b.validate();
        out.push_back(b);
    }
    return out;
}

void write_boxes_jsonl(std::ostream& os, const BoxSet& boxes) {
    for (const Box& b : boxes) {
        nlohmann::json j{{"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2}, {"score", b.score}, {"class", b.cls}};
        os << j.dump() << '\n';
    }
}

} // namespace simdet
