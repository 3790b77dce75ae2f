// Hierarchical label universe: steps contain tasks, tasks contain activities,
// and every activity is an (instrument, action, object) triple.
#ifndef MURPHY_SCHEMA_HPP
#define MURPHY_SCHEMA_HPP

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace murphy {

enum class AnnotationType : int { S = 0, T = 1, IAO = 2, I = 3, A = 4, O = 5 };

inline constexpr int kNumTypes = 6;
inline constexpr std::array<AnnotationType, kNumTypes> kAllTypes = {
    AnnotationType::S, AnnotationType::T, AnnotationType::IAO,
    AnnotationType::I, AnnotationType::A, AnnotationType::O};
inline constexpr std::array<AnnotationType, 3> kPrimaryTypes = {AnnotationType::S, AnnotationType::T,
                                                                AnnotationType::IAO};

constexpr int index_of(AnnotationType t) { return static_cast<int>(t); }
std::string_view type_name(AnnotationType t);
AnnotationType parse_type(std::string_view name);

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Category names per type plus the containment maps. Every type carries one
/// extra reserved category, appended after the named ones, for under-effective
/// frames.
struct LabelSchema {
  std::array<std::vector<std::string>, kNumTypes> names;
  std::vector<std::vector<int>> step_tasks;
  std::vector<std::vector<int>> task_activities;
  std::vector<std::array<int, 3>> activity_components;  // (instrument, action, object)

  /// Number of named categories (without the reserved one).
  int count(AnnotationType t) const { return static_cast<int>(names[index_of(t)].size()); }
  /// Classifier width: named categories plus the reserved index.
  int width(AnnotationType t) const { return count(t) + 1; }
  int reserved(AnnotationType t) const { return count(t); }

  /// Parent step of each task.
  std::vector<int> task_parent() const;
  bool step_contains(int step, int task) const;
  bool task_contains(int task, int activity) const;
};

/// Checks every structural invariant; throws SchemaError naming the offender.
void check_schema(const LabelSchema& schema);

LabelSchema schema_from_json(const nlohmann::json& doc);
nlohmann::json schema_to_json(const LabelSchema& schema);
LabelSchema load_schema(const std::filesystem::path& path);
void save_schema(const LabelSchema& schema, const std::filesystem::path& path);

/// Binary containment mask, rows indexed by the coarse type and columns by the
/// fine type, both including the reserved index.
struct KnowledgeMatrix {
  AnnotationType coarse = AnnotationType::S;
  AnnotationType fine = AnnotationType::T;
  Eigen::MatrixXi matrix;
};

/// Supported pairs: (S,T), (T,IAO), (S,IAO). (S,IAO) is the boolean product of
/// the other two.
KnowledgeMatrix build_knowledge_matrix(const LabelSchema& schema, AnnotationType coarse, AnnotationType fine);

struct FrameAnnotation {
  int frame = 0;
  std::array<int, kNumTypes> labels{};
  bool effective = true;

  int label(AnnotationType t) const { return labels[index_of(t)]; }
  friend bool operator==(const FrameAnnotation&, const FrameAnnotation&) = default;
};

FrameAnnotation under_effective_frame(const LabelSchema& schema, int frame);

enum class ViolationKind { Ordering, Containment, ComponentMismatch, BoundaryAlignment, UnderEffective };

std::string_view violation_name(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  int frame;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::size_t count(ViolationKind kind) const;
};

/// Minimum length of an under-effective interlude: the idle gap has to
/// exceed this many seconds to be annotated.
inline constexpr double kUnderEffectiveSeconds = 5.0;

/// Checks a frame stream against the schema:
///  - effective frames respect step->task->activity containment and carry
///    the activity's component triple;
///  - a coarse label never changes between two consecutive effective frames
///    unless the next finer label changes too (coarse spans are unions of
///    their children's spans);
///  - every run of non-effective frames is labeled with the reserved indices
///    and lasts longer than the under-effective threshold.
ValidationReport validate_annotations(const LabelSchema& schema, const std::vector<FrameAnnotation>& frames,
                                      double frame_rate, double threshold_seconds = kUnderEffectiveSeconds);

std::vector<FrameAnnotation> load_annotations(const std::filesystem::path& path);
void save_annotations(const std::vector<FrameAnnotation>& frames, const std::filesystem::path& path);

}  // namespace murphy

#endif  // MURPHY_SCHEMA_HPP
