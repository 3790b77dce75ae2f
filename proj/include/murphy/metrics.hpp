// Evaluation: per-type average precision, SAP3/SAP6 summaries and
// segment-level edit distance with a minimum-run tolerance.
#ifndef MURPHY_METRICS_HPP
#define MURPHY_METRICS_HPP

#include "murphy/schema.hpp"

#include <Eigen/Core>

#include <array>
#include <map>
#include <vector>

namespace murphy {

/// Area under the precision-recall curve of one category, sweeping the score
/// threshold over every distinct score (tied scores form one threshold).
/// Returns NaN when there are no positives.
double average_precision(const Eigen::Ref<const Eigen::VectorXd>& scores, const std::vector<bool>& positive);

/// Mean AP over the categories present in `labels`, scaled to [0, 100].
/// scores is N x T, one row of class scores per frame.
double mean_average_precision(const Eigen::Ref<const Eigen::MatrixXd>& scores, const std::vector<int>& labels);

/// Pooled per-frame scores and ground truth for every annotation type.
struct EvalRecord {
  std::array<Eigen::MatrixXd, kNumTypes> scores;
  std::array<std::vector<int>, kNumTypes> labels;
  std::vector<int> frame_index;
  std::vector<int> sequence_id;

  /// Throws if rows disagree or a score row does not sum to 1 within 1e-5.
  void check() const;
  void append(const EvalRecord& other);
  int size() const { return static_cast<int>(frame_index.size()); }
};

double mean_average_precision(const EvalRecord& record, AnnotationType type);

enum class SapKind { SAP3, SAP6 };

/// Unweighted mean of the S, T, IAO (SAP3) or all six (SAP6) mAP values.
double compute_sap(const std::map<AnnotationType, double>& maps, SapKind kind);

struct Segment {
  int category;
  int start;  // first frame
  int end;    // last frame, inclusive

  int length() const { return end - start + 1; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

using SegmentSequence = std::vector<Segment>;

/// Run-length encodes the stream, then repeatedly removes the shortest run
/// below `tolerance` frames (earliest first). A removed run whose neighbours
/// share a category merges them; otherwise it is absorbed by the longer
/// neighbour (the left one on ties).
SegmentSequence frames_to_segments(const std::vector<int>& frame_labels, int tolerance);
std::vector<int> segments_to_frames(const SegmentSequence& segments);

/// Levenshtein distance between category strings, unit costs.
int edit_distance(const std::vector<int>& a, const std::vector<int>& b);
int edit_distance(const SegmentSequence& gt, const SegmentSequence& pred);

}  // namespace murphy

#endif  // MURPHY_METRICS_HPP
