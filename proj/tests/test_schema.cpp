#include "murphy/schema.hpp"
#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <fstream>

using namespace murphy;
using AT = AnnotationType;

namespace {

nlohmann::json minimal_doc() {
  return {{"steps", {"s"}},       {"tasks", {"t"}},          {"activities", {"a"}},
          {"instruments", {"i"}}, {"actions", {"v"}},        {"objects", {"o"}},
          {"step_tasks", {{0}}},  {"task_activities", {{0}}}, {"activity_components", {{0, 0, 0}}}};
}

// Effective frame for (step, task, activity) with the activity's components.
FrameAnnotation frame_of(const LabelSchema& s, int frame, int step, int task, int act) {
  FrameAnnotation f;
  f.frame = frame;
  f.labels = {step, task, act, s.activity_components[act][0], s.activity_components[act][1],
              s.activity_components[act][2]};
  return f;
}

}  // namespace

TEST_CASE("RLLS-shaped schema loads with the expected counts") {
  const auto s = test::rlls_schema();
  CHECK(s.count(AT::S) == 6);
  CHECK(s.count(AT::T) == 15);
  CHECK(s.count(AT::IAO) == 38);
  CHECK(s.count(AT::I) == 11);
  CHECK(s.count(AT::A) == 8);
  CHECK(s.count(AT::O) == 16);
  CHECK(s.width(AT::IAO) == 39);
}

TEST_CASE("minimal one-of-each schema is valid") {
  const auto s = schema_from_json(minimal_doc());
  for (auto t : kAllTypes) CHECK(s.count(t) == 1);
  const auto k = build_knowledge_matrix(s, AT::S, AT::T);
  CHECK(k.matrix(0, 0) == 1);
}

TEST_CASE("schema errors name the offending entry") {
  auto doc = minimal_doc();
  doc["steps"] = {"s0", "s1"};
  doc["step_tasks"] = {{0}, {0}};
  CHECK_THROWS_WITH_AS(schema_from_json(doc), doctest::Contains("task 0 has multiple parents"), SchemaError);

  doc = minimal_doc();
  doc["tasks"] = {"t0", "t1"};
  doc["task_activities"] = {{0}, {0}};
  CHECK_THROWS_WITH_AS(schema_from_json(doc), doctest::Contains("orphan task 1"), SchemaError);

  doc = minimal_doc();
  doc["activity_components"] = {{0, 3, 0}};
  CHECK_THROWS_AS(schema_from_json(doc), SchemaError);

  doc = minimal_doc();
  doc.erase("objects");
  CHECK_THROWS_WITH_AS(schema_from_json(doc), doctest::Contains("objects"), SchemaError);
}

TEST_CASE("schema survives a json round trip") {
  const auto s = test::rlls_schema();
  const auto back = schema_from_json(schema_to_json(s));
  CHECK(back.names == s.names);
  CHECK(back.step_tasks == s.step_tasks);
  CHECK(back.task_activities == s.task_activities);
  CHECK(back.activity_components == s.activity_components);
}

TEST_CASE("knowledge matrices") {
  const auto s = test::rlls_schema();
  const auto st = build_knowledge_matrix(s, AT::S, AT::T);
  const auto ta = build_knowledge_matrix(s, AT::T, AT::IAO);
  const auto sa = build_knowledge_matrix(s, AT::S, AT::IAO);

  SUBCASE("parenchymal transection holds three tasks") {
    int row = -1;
    for (int k = 0; k < s.count(AT::S); ++k)
      if (s.names[0][k] == "parenchymal transection") row = k;
    REQUIRE(row >= 0);
    CHECK(st.matrix.row(row).sum() == 3);
  }

  SUBCASE("shapes include the reserved index and link reserved to reserved only") {
    CHECK(st.matrix.rows() == 7);
    CHECK(st.matrix.cols() == 16);
    CHECK(st.matrix(6, 15) == 1);
    CHECK(st.matrix.row(6).sum() == 1);
    CHECK(st.matrix.col(15).sum() == 1);
  }

  SUBCASE("every task has exactly one parent step") {
    for (int t = 0; t < s.count(AT::T); ++t) CHECK(st.matrix.col(t).sum() == 1);
  }

  SUBCASE("(S,IAO) is the clamped boolean product, brute force") {
    for (int a = 0; a < sa.matrix.rows(); ++a)
      for (int c = 0; c < sa.matrix.cols(); ++c) {
        int any = 0;
        for (int t = 0; t < st.matrix.cols(); ++t) any |= st.matrix(a, t) & ta.matrix(t, c);
        CHECK(sa.matrix(a, c) == any);
      }
  }

  SUBCASE("deterministic and idempotent") {
    CHECK(build_knowledge_matrix(s, AT::S, AT::T).matrix == st.matrix);
    CHECK(build_knowledge_matrix(s, AT::T, AT::IAO).matrix == ta.matrix);
  }

  CHECK_THROWS_AS(build_knowledge_matrix(s, AT::T, AT::S), std::invalid_argument);
}

TEST_CASE("validator") {
  const auto s = test::rlls_schema();
  // Step 0 contains task 0; task 0 contains some activity a0.
  const int t0 = s.step_tasks[0][0];
  const int t1 = s.step_tasks[0][1];
  const int a0 = s.task_activities[t0][0];
  const int a1 = s.task_activities[t1][0];

  SUBCASE("task outside its step is a containment violation") {
    const int foreign = s.step_tasks[1][0];
    auto f = frame_of(s, 0, 0, foreign, s.task_activities[foreign][0]);
    const auto r = validate_annotations(s, {f}, 1.0);
    CHECK(r.count(ViolationKind::Containment) == 1);
  }

  SUBCASE("wrong component triple") {
    auto f = frame_of(s, 0, 0, t0, a0);
    f.labels[index_of(AT::O)] = (f.labels[index_of(AT::O)] + 1) % s.count(AT::O);
    CHECK(validate_annotations(s, {f}, 1.0).count(ViolationKind::ComponentMismatch) == 1);
  }

  SUBCASE("step span equal to the union of its task spans") {
    std::vector<FrameAnnotation> frames;
    for (int k = 0; k < 4; ++k) frames.push_back(frame_of(s, k, 0, t0, a0));
    for (int k = 4; k < 8; ++k) frames.push_back(frame_of(s, k, 0, t1, a1));
    const int t2 = s.step_tasks[1][0];
    for (int k = 8; k < 12; ++k) frames.push_back(frame_of(s, k, 1, t2, s.task_activities[t2][0]));
    CHECK(validate_annotations(s, frames, 1.0).ok());
  }

  SUBCASE("step changing inside a task segment breaks alignment") {
    // Task 5 recurs across a step change only by mislabeling the step.
    std::vector<FrameAnnotation> frames;
    for (int k = 0; k < 4; ++k) frames.push_back(frame_of(s, k, 0, t0, a0));
    auto bad = frame_of(s, 4, 0, t0, a0);
    bad.labels[0] = 1;
    frames.push_back(bad);
    const auto r = validate_annotations(s, frames, 1.0);
    CHECK(r.count(ViolationKind::BoundaryAlignment) == 1);
  }

  SUBCASE("six-second idle gap with effective labels") {
    std::vector<FrameAnnotation> frames;
    for (int k = 0; k < 6; ++k) {
      auto f = frame_of(s, k, 0, t0, a0);
      f.effective = false;
      frames.push_back(f);
    }
    const auto r = validate_annotations(s, frames, 1.0, 5.0);
    CHECK(r.count(ViolationKind::UnderEffective) == 1);
    CHECK(r.violations.front().detail == "idle gap carries effective labels");
  }

  SUBCASE("idle gaps must exceed the threshold") {
    std::vector<FrameAnnotation> frames;
    for (int k = 0; k < 5; ++k) frames.push_back(under_effective_frame(s, k));
    CHECK(validate_annotations(s, frames, 1.0, 5.0).count(ViolationKind::UnderEffective) == 1);
    frames.push_back(under_effective_frame(s, 5));
    CHECK(validate_annotations(s, frames, 1.0, 5.0).ok());
  }

  SUBCASE("frame gap is an ordering violation") {
    const auto r = validate_annotations(s, {frame_of(s, 0, 0, t0, a0), frame_of(s, 2, 0, t0, a0)}, 1.0);
    CHECK(r.count(ViolationKind::Ordering) == 1);
  }

  SUBCASE("accepted effective frames agree with the knowledge matrices") {
    const auto st = build_knowledge_matrix(s, AT::S, AT::T);
    const auto ta = build_knowledge_matrix(s, AT::T, AT::IAO);
    std::mt19937_64 rng(5);
    int accepted = 0;
    for (int n = 0; n < 2000; ++n) {
      std::uniform_int_distribution<int> us(0, s.count(AT::S) - 1), ut(0, s.count(AT::T) - 1),
          ua(0, s.count(AT::IAO) - 1);
      const auto f = frame_of(s, 0, us(rng), ut(rng), ua(rng));
      if (!validate_annotations(s, {f}, 1.0).ok()) continue;
      ++accepted;
      CHECK(st.matrix(f.labels[0], f.labels[1]) == 1);
      CHECK(ta.matrix(f.labels[1], f.labels[2]) == 1);
    }
    CHECK(accepted > 0);
  }
}

TEST_CASE("annotations round trip through jsonl") {
  const auto s = test::rlls_schema();
  const auto dir = test::scratch_dir("annotations");
  std::vector<FrameAnnotation> frames = {frame_of(s, 0, 0, 0, s.task_activities[0][0]), under_effective_frame(s, 1)};
  save_annotations(frames, dir / "a.jsonl");
  CHECK(load_annotations(dir / "a.jsonl") == frames);
}

TEST_CASE("type names parse back") {
  for (auto t : kAllTypes) CHECK(parse_type(type_name(t)) == t);
  CHECK_THROWS(parse_type("X"));
}
