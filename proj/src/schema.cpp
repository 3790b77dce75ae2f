#include "murphy/schema.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace murphy {

namespace {

constexpr std::array<const char*, kNumTypes> kTypeNames = {"S", "T", "IAO", "I", "A", "O"};
constexpr std::array<const char*, kNumTypes> kNameKeys = {"steps",       "tasks",   "activities",
                                                          "instruments", "actions", "objects"};

std::string id_str(std::string_view what, int id) {
  std::ostringstream os;
  os << what << ' ' << id;
  return os.str();
}

std::vector<std::vector<int>> parse_id_map(const nlohmann::json& doc, const char* key, int expected) {
  if (!doc.contains(key)) throw SchemaError(std::string("schema: missing key '") + key + "'");
  const auto& node = doc.at(key);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(expected));
  if (node.is_array()) {
    if (static_cast<int>(node.size()) != expected)
      throw SchemaError(std::string("schema: '") + key + "' must list one entry per parent");
    for (int i = 0; i < expected; ++i) out[i] = node[i].get<std::vector<int>>();
  } else if (node.is_object()) {
    for (const auto& [k, v] : node.items()) {
      const int id = std::stoi(k);
      if (id < 0 || id >= expected) throw SchemaError(std::string("schema: '") + key + "' has unknown parent " + k);
      out[id] = v.get<std::vector<int>>();
    }
  } else {
    throw SchemaError(std::string("schema: '") + key + "' must be an array or object");
  }
  return out;
}

}  // namespace

std::string_view type_name(AnnotationType t) { return kTypeNames[index_of(t)]; }

AnnotationType parse_type(std::string_view name) {
  for (int i = 0; i < kNumTypes; ++i)
    if (name == kTypeNames[i]) return static_cast<AnnotationType>(i);
  throw std::invalid_argument("unknown annotation type '" + std::string(name) + "'");
}

std::vector<int> LabelSchema::task_parent() const {
  std::vector<int> parent(names[index_of(AnnotationType::T)].size(), -1);
  for (std::size_t s = 0; s < step_tasks.size(); ++s)
    for (int t : step_tasks[s]) parent[t] = static_cast<int>(s);
  return parent;
}

bool LabelSchema::step_contains(int step, int task) const {
  const auto& tasks = step_tasks.at(step);
  return std::find(tasks.begin(), tasks.end(), task) != tasks.end();
}

bool LabelSchema::task_contains(int task, int activity) const {
  const auto& acts = task_activities.at(task);
  return std::find(acts.begin(), acts.end(), activity) != acts.end();
}

void check_schema(const LabelSchema& schema) {
  for (int i = 0; i < kNumTypes; ++i) {
    const auto& n = schema.names[i];
    if (n.empty()) throw SchemaError(std::string("schema: no categories for type ") + kTypeNames[i]);
    std::set<std::string> seen;
    for (const auto& name : n)
      if (!seen.insert(name).second)
        throw SchemaError(std::string("schema: duplicate name '") + name + "' in " + kNameKeys[i]);
  }
  const int steps = schema.count(AnnotationType::S);
  const int tasks = schema.count(AnnotationType::T);
  const int acts = schema.count(AnnotationType::IAO);
  if (static_cast<int>(schema.step_tasks.size()) != steps) throw SchemaError("schema: step_tasks size mismatch");
  if (static_cast<int>(schema.task_activities.size()) != tasks)
    throw SchemaError("schema: task_activities size mismatch");

  std::vector<int> parent(tasks, -1);
  for (int s = 0; s < steps; ++s) {
    if (schema.step_tasks[s].empty()) throw SchemaError("schema: " + id_str("step", s) + " has no tasks");
    for (int t : schema.step_tasks[s]) {
      if (t < 0 || t >= tasks) throw SchemaError("schema: " + id_str("step", s) + " lists unknown " + id_str("task", t));
      if (parent[t] >= 0) throw SchemaError("schema: " + id_str("task", t) + " has multiple parents");
      parent[t] = s;
    }
  }
  for (int t = 0; t < tasks; ++t)
    if (parent[t] < 0) throw SchemaError("schema: orphan " + id_str("task", t));

  std::vector<bool> covered(acts, false);
  for (int t = 0; t < tasks; ++t) {
    if (schema.task_activities[t].empty()) throw SchemaError("schema: " + id_str("task", t) + " has no activities");
    std::set<int> seen;
    for (int a : schema.task_activities[t]) {
      if (a < 0 || a >= acts)
        throw SchemaError("schema: " + id_str("task", t) + " lists unknown " + id_str("activity", a));
      if (!seen.insert(a).second)
        throw SchemaError("schema: " + id_str("task", t) + " lists " + id_str("activity", a) + " twice");
      covered[a] = true;
    }
  }
  for (int a = 0; a < acts; ++a)
    if (!covered[a]) throw SchemaError("schema: orphan " + id_str("activity", a));

  if (static_cast<int>(schema.activity_components.size()) != acts)
    throw SchemaError("schema: activity_components must have one triple per activity");
  const std::array<int, 3> limits = {schema.count(AnnotationType::I), schema.count(AnnotationType::A),
                                     schema.count(AnnotationType::O)};
  for (int a = 0; a < acts; ++a)
    for (int c = 0; c < 3; ++c) {
      const int v = schema.activity_components[a][c];
      if (v < 0 || v >= limits[c])
        throw SchemaError("schema: " + id_str("activity", a) + " has an invalid component triple");
    }
}

LabelSchema schema_from_json(const nlohmann::json& doc) {
  LabelSchema schema;
  try {
    for (int i = 0; i < kNumTypes; ++i) {
      if (!doc.contains(kNameKeys[i])) throw SchemaError(std::string("schema: missing key '") + kNameKeys[i] + "'");
      schema.names[i] = doc.at(kNameKeys[i]).get<std::vector<std::string>>();
    }
    schema.step_tasks = parse_id_map(doc, "step_tasks", schema.count(AnnotationType::S));
    schema.task_activities = parse_id_map(doc, "task_activities", schema.count(AnnotationType::T));

    const int acts = schema.count(AnnotationType::IAO);
    if (!doc.contains("activity_components")) throw SchemaError("schema: missing key 'activity_components'");
    const auto& comps = doc.at("activity_components");
    schema.activity_components.assign(acts, {-1, -1, -1});
    auto read_triple = [&](int a, const nlohmann::json& v) {
      if (a < 0 || a >= acts) throw SchemaError("schema: activity_components names unknown " + id_str("activity", a));
      const auto triple = v.get<std::vector<int>>();
      if (triple.size() != 3)
        throw SchemaError("schema: " + id_str("activity", a) + " component triple must have 3 entries");
      schema.activity_components[a] = {triple[0], triple[1], triple[2]};
    };
    if (comps.is_array()) {
      if (static_cast<int>(comps.size()) != acts)
        throw SchemaError("schema: activity_components must have one triple per activity");
      for (int a = 0; a < acts; ++a) read_triple(a, comps[a]);
    } else {
      for (const auto& [k, v] : comps.items()) read_triple(std::stoi(k), v);
    }
    for (int a = 0; a < acts; ++a)
      if (schema.activity_components[a][0] < 0)
        throw SchemaError("schema: " + id_str("activity", a) + " is missing its component triple");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("schema: parse failure: ") + e.what());
  }
  check_schema(schema);
  return schema;
}

nlohmann::json schema_to_json(const LabelSchema& schema) {
  nlohmann::json doc;
  for (int i = 0; i < kNumTypes; ++i) doc[kNameKeys[i]] = schema.names[i];
  doc["step_tasks"] = schema.step_tasks;
  doc["task_activities"] = schema.task_activities;
  doc["activity_components"] = schema.activity_components;
  return doc;
}

LabelSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("schema: cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema: parse failure in " + path.string() + ": " + e.what());
  }
  return schema_from_json(doc);
}

void save_schema(const LabelSchema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << schema_to_json(schema).dump(2) << '\n';
}

KnowledgeMatrix build_knowledge_matrix(const LabelSchema& schema, AnnotationType coarse, AnnotationType fine) {
  using AT = AnnotationType;
  KnowledgeMatrix km{coarse, fine, {}};
  auto step_task = [&] {
    Eigen::MatrixXi m = Eigen::MatrixXi::Zero(schema.width(AT::S), schema.width(AT::T));
    for (int s = 0; s < schema.count(AT::S); ++s)
      for (int t : schema.step_tasks[s]) m(s, t) = 1;
    m(schema.reserved(AT::S), schema.reserved(AT::T)) = 1;
    return m;
  };
  auto task_activity = [&] {
    Eigen::MatrixXi m = Eigen::MatrixXi::Zero(schema.width(AT::T), schema.width(AT::IAO));
    for (int t = 0; t < schema.count(AT::T); ++t)
      for (int a : schema.task_activities[t]) m(t, a) = 1;
    m(schema.reserved(AT::T), schema.reserved(AT::IAO)) = 1;
    return m;
  };
  if (coarse == AT::S && fine == AT::T) {
    km.matrix = step_task();
  } else if (coarse == AT::T && fine == AT::IAO) {
    km.matrix = task_activity();
  } else if (coarse == AT::S && fine == AT::IAO) {
    km.matrix = (step_task() * task_activity()).cwiseMin(1);
  } else {
    throw std::invalid_argument("build_knowledge_matrix: unsupported type pair (" + std::string(type_name(coarse)) +
                                "," + std::string(type_name(fine)) + ")");
  }
  return km;
}

FrameAnnotation under_effective_frame(const LabelSchema& schema, int frame) {
  FrameAnnotation f;
  f.frame = frame;
  f.effective = false;
  for (auto t : kAllTypes) f.labels[index_of(t)] = schema.reserved(t);
  return f;
}

std::string_view violation_name(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::Ordering: return "ordering";
    case ViolationKind::Containment: return "containment";
    case ViolationKind::ComponentMismatch: return "component_mismatch";
    case ViolationKind::BoundaryAlignment: return "boundary_alignment";
    case ViolationKind::UnderEffective: return "under_effective";
  }
  return "unknown";
}

std::size_t ValidationReport::count(ViolationKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(violations.begin(), violations.end(), [kind](const Violation& v) { return v.kind == kind; }));
}

ValidationReport validate_annotations(const LabelSchema& schema, const std::vector<FrameAnnotation>& frames,
                                      double frame_rate, double threshold_seconds) {
  using AT = AnnotationType;
  ValidationReport report;
  auto add = [&](ViolationKind k, int frame, std::string detail) {
    report.violations.push_back({k, frame, std::move(detail)});
  };

  for (std::size_t n = 1; n < frames.size(); ++n)
    if (frames[n].frame != frames[n - 1].frame + 1)
      add(ViolationKind::Ordering, frames[n].frame, "frame indices are not sorted and contiguous");

  auto is_reserved = [&](const FrameAnnotation& f, AT t) { return f.label(t) == schema.reserved(t); };
  auto all_reserved = [&](const FrameAnnotation& f) {
    return std::all_of(kAllTypes.begin(), kAllTypes.end(), [&](AT t) { return is_reserved(f, t); });
  };

  for (const auto& f : frames) {
    bool in_range = true;
    for (auto t : kAllTypes)
      if (f.label(t) < 0 || f.label(t) >= schema.width(t)) {
        add(ViolationKind::Containment, f.frame, std::string(type_name(t)) + " label out of range");
        in_range = false;
      }
    if (!in_range || !f.effective) continue;
    if (std::any_of(kAllTypes.begin(), kAllTypes.end(), [&](AT t) { return is_reserved(f, t); })) {
      add(ViolationKind::Containment, f.frame, "effective frame carries a reserved label");
      continue;
    }
    const int s = f.label(AT::S), t = f.label(AT::T), a = f.label(AT::IAO);
    if (!schema.step_contains(s, t))
      add(ViolationKind::Containment, f.frame, "task " + std::to_string(t) + " not in step " + std::to_string(s));
    if (!schema.task_contains(t, a))
      add(ViolationKind::Containment, f.frame, "activity " + std::to_string(a) + " not in task " + std::to_string(t));
    const auto& triple = schema.activity_components[a];
    if (f.label(AT::I) != triple[0] || f.label(AT::A) != triple[1] || f.label(AT::O) != triple[2])
      add(ViolationKind::ComponentMismatch, f.frame, "components differ from activity " + std::to_string(a));
  }

  for (std::size_t n = 1; n < frames.size(); ++n) {
    const auto& prev = frames[n - 1];
    const auto& cur = frames[n];
    if (!prev.effective || !cur.effective) continue;
    if (prev.label(AT::S) != cur.label(AT::S) && prev.label(AT::T) == cur.label(AT::T))
      add(ViolationKind::BoundaryAlignment, cur.frame, "step changes inside a task segment");
    if (prev.label(AT::T) != cur.label(AT::T) && prev.label(AT::IAO) == cur.label(AT::IAO))
      add(ViolationKind::BoundaryAlignment, cur.frame, "task changes inside an activity segment");
  }

  const double min_frames = threshold_seconds * frame_rate;
  for (std::size_t n = 0; n < frames.size();) {
    if (frames[n].effective) {
      ++n;
      continue;
    }
    std::size_t end = n;
    bool labeled = true;
    while (end < frames.size() && !frames[end].effective) {
      labeled = labeled && all_reserved(frames[end]);
      ++end;
    }
    const auto len = static_cast<double>(end - n);
    if (!labeled)
      add(ViolationKind::UnderEffective, frames[n].frame, "idle gap carries effective labels");
    if (len <= min_frames)
      add(ViolationKind::UnderEffective, frames[n].frame,
          "under-effective interlude of " + std::to_string(end - n) + " frames does not exceed the threshold");
    n = end;
  }
  return report;
}

std::vector<FrameAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<FrameAnnotation> frames;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      FrameAnnotation f;
      f.frame = j.at("frame").get<int>();
      f.labels = {j.at("s").get<int>(), j.at("t").get<int>(), j.at("iao").get<int>(),
                  j.at("i").get<int>(), j.at("a").get<int>(), j.at("o").get<int>()};
      f.effective = j.at("effective").get<bool>();
      frames.push_back(f);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return frames;
}

void save_annotations(const std::vector<FrameAnnotation>& frames, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& f : frames) {
    nlohmann::ordered_json j;
    j["frame"] = f.frame;
    j["s"] = f.labels[0];
    j["t"] = f.labels[1];
    j["iao"] = f.labels[2];
    j["i"] = f.labels[3];
    j["a"] = f.labels[4];
    j["o"] = f.labels[5];
    j["effective"] = f.effective;
    out << j.dump() << '\n';
  }
}

}  // namespace murphy
