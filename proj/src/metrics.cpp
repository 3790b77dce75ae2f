#include "murphy/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace murphy {

double average_precision(const Eigen::Ref<const Eigen::VectorXd>& scores, const std::vector<bool>& positive) {
  const auto n = static_cast<std::size_t>(scores.size());
  if (positive.size() != n) throw std::invalid_argument("average_precision: size mismatch");
  const auto npos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  if (npos == 0) return std::numeric_limits<double>::quiet_NaN();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores(a) > scores(b); });

  double ap = 0, tp = 0, fp = 0, prev_recall = 0;
  for (std::size_t k = 0; k < n;) {
    const double threshold = scores(order[k]);
    while (k < n && scores(order[k]) == threshold) {
      (positive[order[k]] ? tp : fp) += 1;
      ++k;
    }
    const double recall = tp / npos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

double mean_average_precision(const Eigen::Ref<const Eigen::MatrixXd>& scores, const std::vector<int>& labels) {
  if (scores.rows() == 0) throw std::invalid_argument("mean_average_precision: no frames");
  if (static_cast<Eigen::Index>(labels.size()) != scores.rows())
    throw std::invalid_argument("mean_average_precision: one label per frame required");
  double sum = 0;
  int present = 0;
  std::vector<bool> positive(labels.size());
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    bool any = false;
    for (std::size_t n = 0; n < labels.size(); ++n) {
      positive[n] = labels[n] == c;
      any = any || positive[n];
    }
    if (!any) continue;
    sum += average_precision(scores.col(c), positive);
    ++present;
  }
  return present == 0 ? 0.0 : 100.0 * sum / present;
}

void EvalRecord::check() const {
  const auto n = frame_index.size();
  if (sequence_id.size() != n) throw std::invalid_argument("EvalRecord: sequence ids do not match frames");
  for (int i = 0; i < kNumTypes; ++i) {
    if (labels[i].size() != n || static_cast<std::size_t>(scores[i].rows()) != n)
      throw std::invalid_argument("EvalRecord: rows do not match frames");
    for (Eigen::Index r = 0; r < scores[i].rows(); ++r)
      if (std::abs(scores[i].row(r).sum() - 1.0) > 1e-5)
        throw std::invalid_argument("EvalRecord: score row " + std::to_string(r) + " does not sum to 1");
  }
}

void EvalRecord::append(const EvalRecord& other) {
  for (int i = 0; i < kNumTypes; ++i) {
    if (scores[i].size() == 0) {
      scores[i] = other.scores[i];
    } else if (other.scores[i].rows() > 0) {
      Eigen::MatrixXd joined(scores[i].rows() + other.scores[i].rows(), scores[i].cols());
      joined << scores[i], other.scores[i];
      scores[i] = std::move(joined);
    }
    labels[i].insert(labels[i].end(), other.labels[i].begin(), other.labels[i].end());
  }
  frame_index.insert(frame_index.end(), other.frame_index.begin(), other.frame_index.end());
  sequence_id.insert(sequence_id.end(), other.sequence_id.begin(), other.sequence_id.end());
}

double mean_average_precision(const EvalRecord& record, AnnotationType type) {
  return mean_average_precision(record.scores[index_of(type)], record.labels[index_of(type)]);
}

double compute_sap(const std::map<AnnotationType, double>& maps, SapKind kind) {
  const std::vector<AnnotationType> needed = kind == SapKind::SAP3
                                                 ? std::vector<AnnotationType>(kPrimaryTypes.begin(), kPrimaryTypes.end())
                                                 : std::vector<AnnotationType>(kAllTypes.begin(), kAllTypes.end());
  double sum = 0;
  for (auto t : needed) {
    auto it = maps.find(t);
    if (it == maps.end()) throw std::invalid_argument("compute_sap: missing mAP for type " + std::string(type_name(t)));
    sum += it->second;
  }
  return sum / static_cast<double>(needed.size());
}

SegmentSequence frames_to_segments(const std::vector<int>& frame_labels, int tolerance) {
  if (frame_labels.empty()) throw std::invalid_argument("frames_to_segments: empty input");
  if (tolerance < 0) throw std::invalid_argument("frames_to_segments: tolerance must be >= 0");
  SegmentSequence runs;
  for (int f = 0; f < static_cast<int>(frame_labels.size()); ++f) {
    if (!runs.empty() && runs.back().category == frame_labels[f])
      runs.back().end = f;
    else
      runs.push_back({frame_labels[f], f, f});
  }
  while (runs.size() > 1) {
    std::size_t victim = runs.size();
    for (std::size_t k = 0; k < runs.size(); ++k)
      if (runs[k].length() < tolerance && (victim == runs.size() || runs[k].length() < runs[victim].length()))
        victim = k;
    if (victim == runs.size()) break;

    const bool has_left = victim > 0;
    const bool has_right = victim + 1 < runs.size();
    if (has_left && has_right && runs[victim - 1].category == runs[victim + 1].category) {
      runs[victim - 1].end = runs[victim + 1].end;
      runs.erase(runs.begin() + static_cast<std::ptrdiff_t>(victim), runs.begin() + static_cast<std::ptrdiff_t>(victim) + 2);
    } else if (has_left && (!has_right || runs[victim - 1].length() >= runs[victim + 1].length())) {
      runs[victim - 1].end = runs[victim].end;
      runs.erase(runs.begin() + static_cast<std::ptrdiff_t>(victim));
    } else {
      runs[victim + 1].start = runs[victim].start;
      runs.erase(runs.begin() + static_cast<std::ptrdiff_t>(victim));
    }
  }
  return runs;
}

std::vector<int> segments_to_frames(const SegmentSequence& segments) {
  std::vector<int> out;
  for (const auto& s : segments) out.insert(out.end(), static_cast<std::size_t>(s.length()), s.category);
  return out;
}

int edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

int edit_distance(const SegmentSequence& gt, const SegmentSequence& pred) {
  std::vector<int> a, b;
  for (const auto& s : gt) a.push_back(s.category);
  for (const auto& s : pred) b.push_back(s.category);
  return edit_distance(a, b);
}

}  // namespace murphy
