#include "distill_lab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "distill_lab/checkpoint.hpp"
#include "distill_lab/errors.hpp"

namespace distill_lab {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Reads the keys of one JSON object, type-checking each one, then rejects
// whatever was not read.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  std::optional<double> number(const char* key) {
    const auto* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_number()) fail(at(key), "expected a number");
    return v->get<double>();
  }

  std::optional<std::uint64_t> unsigned_int(const char* key) {
    const auto* v = take(key);
    if (!v) return std::nullopt;
    return as_unsigned(*v, at(key));
  }

  std::optional<bool> boolean(const char* key) {
    const auto* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) fail(at(key), "expected true or false");
    return v->get<bool>();
  }

  std::optional<std::string> string(const char* key) {
    const auto* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) fail(at(key), "expected a string");
    return v->get<std::string>();
  }

  std::optional<std::vector<std::uint64_t>> unsigned_list(const char* key) {
    const auto* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_array()) fail(at(key), "expected an array of non-negative integers");
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_unsigned((*v)[i], at(key) + "[" + std::to_string(i) + "]"));
    return out;
  }

  const json* object(const char* key) {
    const auto* v = take(key);
    if (v && !v->is_object()) fail(at(key), "expected an object");
    return v;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(at(it.key().c_str()), "unknown key");
    }
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError((path.empty() ? std::string("config") : path) + ": " + what);
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  static std::uint64_t as_unsigned(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) {
      if (v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
      fail(path, "must be >= 0");
    }
    fail(path, "expected a non-negative integer");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<std::size_t> to_sizes(const std::vector<std::uint64_t>& v) { return {v.begin(), v.end()}; }

void check_widths(const std::vector<std::size_t>& widths, const std::string& path) {
  if (widths.empty()) Fields::fail(path, "needs at least the input width");
  for (auto w : widths)
    if (w == 0) Fields::fail(path, "widths must be >= 1");
}

DataSpec parse_data(const json& j) {
  Fields f(j, "data");
  DataSpec spec;
  const bool from_files = f.has("train_path") || f.has("test_path");
  if (from_files) {
    auto train = f.string("train_path");
    auto test = f.string("test_path");
    if (!train || !test) Fields::fail("data", "train_path and test_path must be given together");
    spec.train_path = *train;
    spec.test_path = *test;
    if (auto c = f.unsigned_int("classes")) spec.classes = *c;
    f.finish();
    return spec;
  }
  TaskSpec t;
  if (auto kind = f.string("kind")) {
    if (*kind == "spirals") t.kind = TaskKind::spirals;
    else if (*kind == "blobs") t.kind = TaskKind::blobs;
    else Fields::fail("data.kind", "expected 'spirals' or 'blobs'");
  }
  if (auto v = f.unsigned_int("classes")) t.classes = *v;
  if (auto v = f.unsigned_int("per_class")) t.per_class = *v;
  if (auto v = f.unsigned_int("test_per_class")) t.test_per_class = *v;
  if (auto v = f.number("noise")) t.noise = *v;
  if (auto v = f.number("turns")) t.turns = *v;
  if (auto v = f.unsigned_int("seed")) t.seed = *v;
  if (auto v = f.boolean("standardize")) t.standardize = *v;
  f.finish();
  if (t.classes < 2) Fields::fail("data.classes", "must be >= 2");
  if (t.per_class < 1) Fields::fail("data.per_class", "must be >= 1");
  if (t.test_per_class < 1) Fields::fail("data.test_per_class", "must be >= 1");
  if (t.kind == TaskKind::blobs ? !(t.noise > 0.0) : !(t.noise >= 0.0)) Fields::fail("data.noise", "out of range");
  if (!(t.turns > 0.0)) Fields::fail("data.turns", "must be > 0");
  spec.synth = t;
  return spec;
}

DistillConfig parse_distill(const json& j) {
  Fields f(j, "distill");
  auto name = f.string("strategy");
  if (!name) Fields::fail("distill.strategy", "required");
  Strategy s;
  try {
    s = parse_strategy(*name);
  } catch (const ConfigError& e) {
    Fields::fail("distill.strategy", e.what());
  }
  auto c = DistillConfig::defaults(s);
  if (auto v = f.string("matching_loss")) {
    try {
      c.matching_loss = parse_loss_kind(*v);
    } catch (const ConfigError& e) {
      Fields::fail("distill.matching_loss", e.what());
    }
  }
  if (auto v = f.number("lambda")) c.lambda = *v;
  if (auto v = f.number("tau")) c.tau = *v;
  if (auto v = f.number("alpha")) c.alpha = *v;
  if (auto v = f.number("beta")) c.beta = *v;
  if (auto v = f.number("alpha_ce")) c.alpha_ce = *v;
  if (auto v = f.unsigned_int("connector_depth")) c.connector_depth = *v;
  f.finish();
  c.validate();
  return c;
}

TrainConfig parse_train(const json& j) {
  Fields f(j, "train");
  TrainConfig c;
  if (auto v = f.unsigned_int("epochs")) c.epochs = *v;
  if (auto v = f.unsigned_int("batch_size")) c.batch_size = *v;
  if (auto v = f.number("lr")) c.lr = *v;
  if (auto v = f.number("momentum")) c.momentum = *v;
  if (auto v = f.boolean("nesterov")) c.nesterov = *v;
  if (auto v = f.number("weight_decay")) c.weight_decay = *v;
  if (auto v = f.unsigned_list("milestones")) c.milestones = to_sizes(*v);
  if (auto v = f.number("gamma")) c.gamma = *v;
  if (auto v = f.boolean("shuffle")) c.shuffle = *v;
  f.finish();
  c.validate();
  return c;
}

std::string slug(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' ? ch : '_';
  return out;
}

std::filesystem::path seed_dir(const std::filesystem::path& base, std::uint64_t seed) {
  return base / ("seed_" + std::to_string(seed));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) throw ConfigError(what + ": '" + s + "' is not a number");
  return v;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& doc) {
  Fields f(doc, "");
  ExperimentConfig cfg;
  const auto* data = f.object("data");
  if (!data) Fields::fail("data", "required");
  cfg.data = parse_data(*data);

  if (const auto* t = f.object("teacher")) {
    Fields tf(*t, "teacher");
    if (auto w = tf.unsigned_list("widths")) {
      cfg.teacher_widths = to_sizes(*w);
      check_widths(cfg.teacher_widths, "teacher.widths");
    }
    if (auto p = tf.string("checkpoint")) cfg.teacher_checkpoint = *p;
    tf.finish();
  }
  if (const auto* s = f.object("student")) {
    Fields sf(*s, "student");
    if (auto w = sf.unsigned_list("widths")) {
      cfg.student_widths = to_sizes(*w);
      check_widths(cfg.student_widths, "student.widths");
    }
    sf.finish();
  }
  if (const auto* d = f.object("distill")) cfg.distill = parse_distill(*d);
  if (const auto* t = f.object("train")) cfg.train = parse_train(*t);
  auto out = f.string("output_dir");
  if (!out || out->empty()) Fields::fail("output_dir", "required");
  cfg.output_dir = *out;
  if (auto seeds = f.unsigned_list("seeds")) {
    if (seeds->empty()) Fields::fail("seeds", "must list at least one seed");
    cfg.seeds = *seeds;
  }
  f.finish();

  if (cfg.distill) {
    if (cfg.student_widths.empty()) Fields::fail("student.widths", "required for distill");
    if (cfg.distill->strategy == Strategy::ce_only) {
      if (doc.contains("teacher")) Fields::fail("teacher", "must be absent for strategy ce_only");
    } else if (cfg.teacher_checkpoint.empty()) {
      Fields::fail("teacher.checkpoint", "required for strategy " + std::string(to_string(cfg.distill->strategy)));
    }
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  const auto text = read_text(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_experiment_config(doc);
}

ordered_json to_json(const DistillConfig& c) {
  ordered_json j;
  j["strategy"] = std::string(to_string(c.strategy));
  j["matching_loss"] = std::string(to_string(c.matching_loss));
  j["lambda"] = c.lambda;
  j["tau"] = c.tau;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["alpha_ce"] = c.alpha_ce;
  j["connector_depth"] = c.connector_depth;
  return j;
}

ordered_json to_json(const TrainConfig& c) {
  ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["nesterov"] = c.nesterov;
  j["weight_decay"] = c.weight_decay;
  j["milestones"] = c.milestones;
  j["gamma"] = c.gamma;
  j["shuffle"] = c.shuffle;
  return j;
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j;
  ordered_json d;
  if (c.data.synth) {
    const auto& t = *c.data.synth;
    d["kind"] = t.kind == TaskKind::spirals ? "spirals" : "blobs";
    d["classes"] = t.classes;
    d["per_class"] = t.per_class;
    d["test_per_class"] = t.test_per_class;
    d["noise"] = t.noise;
    d["turns"] = t.turns;
    d["seed"] = t.seed;
    d["standardize"] = t.standardize;
  } else {
    d["train_path"] = c.data.train_path.string();
    d["test_path"] = c.data.test_path.string();
    if (c.data.classes) d["classes"] = *c.data.classes;
  }
  j["data"] = d;
  if (!c.teacher_widths.empty() || !c.teacher_checkpoint.empty()) {
    ordered_json t = ordered_json::object();
    if (!c.teacher_widths.empty()) t["widths"] = c.teacher_widths;
    if (!c.teacher_checkpoint.empty()) t["checkpoint"] = c.teacher_checkpoint.string();
    j["teacher"] = t;
  }
  if (!c.student_widths.empty()) j["student"] = {{"widths", c.student_widths}};
  if (c.distill) j["distill"] = to_json(*c.distill);
  j["train"] = to_json(c.train);
  j["output_dir"] = c.output_dir.string();
  j["seeds"] = c.seeds;
  return j;
}

DatasetPair load_data(const DataSpec& spec) {
  if (spec.synth) return make_task(*spec.synth);
  DatasetPair pair{load_dataset(spec.train_path, spec.classes), load_dataset(spec.test_path, spec.classes)};
  const auto c = std::max(pair.train.class_count, pair.test.class_count);
  pair.train.class_count = pair.test.class_count = c;
  pair.test.split = Split::test;
  if (pair.train.dim != pair.test.dim) throw ConfigError("data: train and test files have different feature widths");
  return pair;
}

RunSummary summarize(const DistillOutcome& o, const std::string& label, std::uint64_t seed) {
  RunSummary s;
  s.label = label;
  s.strategy = std::string(to_string(o.config.strategy));
  s.seed = seed;
  s.final_train_acc = o.final_train_acc();
  s.final_test_acc = o.final_test_acc();
  for (const auto& r : o.trace) s.best_test_acc = std::max(s.best_test_acc, r.test_acc);
  s.initial_frob_dist = o.initial_frob_dist;
  if (!o.trace.empty()) s.final_frob_dist = o.trace.back().frob_dist;
  s.steps = o.steps;
  return s;
}

ordered_json to_json(const RunSummary& s) {
  ordered_json j;
  j["label"] = s.label;
  j["strategy"] = s.strategy;
  j["seed"] = s.seed;
  j["final_train_acc"] = s.final_train_acc;
  j["final_test_acc"] = s.final_test_acc;
  j["best_test_acc"] = s.best_test_acc;
  j["initial_frob_dist"] = s.initial_frob_dist ? ordered_json(*s.initial_frob_dist) : ordered_json(nullptr);
  j["final_frob_dist"] = s.final_frob_dist ? ordered_json(*s.final_frob_dist) : ordered_json(nullptr);
  j["steps"] = s.steps;
  return j;
}

ordered_json to_json(const Aggregate& a) {
  ordered_json j;
  j["runs"] = a.runs;
  j["mean_test_acc"] = a.mean_test_acc;
  j["std_test_acc"] = a.std_test_acc;
  j["mean_train_acc"] = a.mean_train_acc;
  j["std_train_acc"] = a.std_train_acc;
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write to " + path.string() + " failed");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_run(const std::filesystem::path& dir, const std::string& ckpt_name, const DistillOutcome& o,
               const RunSummary& s, const ordered_json& config_echo) {
  Checkpoint ckpt;
  ckpt.meta.class_count = o.student.classes();
  ckpt.meta.seed = s.seed;
  ckpt.meta.training_step = o.steps;
  ckpt.network = o.student;
  ckpt.connector = o.connector;
  write_text(dir / ckpt_name, encode_checkpoint(ckpt));
  write_text(dir / "metrics.csv", metrics_csv(o.trace));
  auto j = to_json(s);
  j["distill"] = to_json(o.config);
  j["train"] = to_json(o.train);
  j["train"]["seed"] = s.seed;
  j["config"] = config_echo;
  write_text(dir / "summary.json", j.dump(2) + "\n");
}

Aggregate aggregate(const std::vector<RunSummary>& runs) {
  Aggregate a;
  a.runs = runs.size();
  if (runs.empty()) return a;
  const auto n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    a.mean_test_acc += r.final_test_acc;
    a.mean_train_acc += r.final_train_acc;
  }
  a.mean_test_acc /= n;
  a.mean_train_acc /= n;
  if (runs.size() > 1) {
    for (const auto& r : runs) {
      a.std_test_acc += (r.final_test_acc - a.mean_test_acc) * (r.final_test_acc - a.mean_test_acc);
      a.std_train_acc += (r.final_train_acc - a.mean_train_acc) * (r.final_train_acc - a.mean_train_acc);
    }
    a.std_test_acc = std::sqrt(a.std_test_acc / (n - 1.0));
    a.std_train_acc = std::sqrt(a.std_train_acc / (n - 1.0));
  }
  return a;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("DISTILL_LAB_WORKERS"); env && *env) {
    std::size_t v = 0;
    const char* end = env + std::char_traits<char>::length(env);
    auto [p, ec] = std::from_chars(env, end, v);
    if (ec != std::errc{} || p != end || v == 0) {
      throw ConfigError("DISTILL_LAB_WORKERS must be a positive integer, got '" + std::string(env) + "'");
    }
    return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
          next = n;
        }
      }
    });
  }
  pool.clear();
  if (first) std::rethrow_exception(first);
}

std::vector<RunSummary> run_train_teacher(const ExperimentConfig& cfg, std::size_t workers) {
  if (cfg.teacher_widths.empty()) throw ConfigError("teacher.widths: required for train-teacher");
  const auto data = load_data(cfg.data);
  if (cfg.teacher_widths.front() != data.train.dim) {
    throw ConfigError("teacher.widths: input width " + std::to_string(cfg.teacher_widths.front()) +
                      " != data width " + std::to_string(data.train.dim));
  }
  const auto echo = to_json(cfg);
  std::vector<RunSummary> out(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), workers, [&](std::size_t i) {
    auto t = cfg.train;
    t.seed = cfg.seeds[i];
    auto o = train_teacher(cfg.teacher_widths, data, t);
    out[i] = summarize(o, "teacher", t.seed);
    write_run(seed_dir(cfg.output_dir, t.seed), "teacher.ckpt", o, out[i], echo);
  });
  return out;
}

namespace {

std::vector<RunSummary> run_points(const ExperimentConfig& cfg, const std::vector<SweepPoint>& points,
                                   const std::vector<std::filesystem::path>& dirs, std::size_t workers) {
  const auto data = load_data(cfg.data);
  if (cfg.student_widths.front() != data.train.dim) {
    throw ConfigError("student.widths: input width " + std::to_string(cfg.student_widths.front()) +
                      " != data width " + std::to_string(data.train.dim));
  }
  std::optional<Network> teacher;
  const bool needs_teacher =
      std::any_of(points.begin(), points.end(), [](const auto& p) { return p.config.strategy != Strategy::ce_only; });
  if (needs_teacher) {
    teacher = load_network(cfg.teacher_checkpoint);
    if (teacher->phi.input_dim() != data.train.dim) throw ConfigError("teacher.checkpoint: input width does not match data");
  }
  const auto echo = to_json(cfg);
  const std::size_t seeds = cfg.seeds.size();
  std::vector<RunSummary> out(points.size() * seeds);
  parallel_for(out.size(), workers, [&](std::size_t k) {
    const auto& point = points[k / seeds];
    auto t = cfg.train;
    t.seed = cfg.seeds[k % seeds];
    auto o = distill(cfg.student_widths, teacher ? &*teacher : nullptr, data, point.config, t);
    out[k] = summarize(o, point.label, t.seed);
    write_run(seed_dir(dirs[k / seeds], t.seed), "student.ckpt", o, out[k], echo);
  });
  return out;
}

}  // namespace

std::vector<RunSummary> run_distill(const ExperimentConfig& cfg, std::size_t workers) {
  if (!cfg.distill) throw ConfigError("distill: required for the distill command");
  const std::string label(to_string(cfg.distill->strategy));
  auto runs = run_points(cfg, {{label, label, *cfg.distill}}, {cfg.output_dir}, workers);
  ordered_json j;
  j["label"] = label;
  j["aggregate"] = to_json(aggregate(runs));
  j["runs"] = ordered_json::array();
  for (const auto& r : runs) j["runs"].push_back(to_json(r));
  write_text(cfg.output_dir / "aggregate.json", j.dump(2) + "\n");
  return runs;
}

std::string sweep_axis_name(const std::string& axis_spec) { return axis_spec.substr(0, axis_spec.find('=')); }

std::vector<SweepPoint> sweep_points(const std::string& axis_spec, const DistillConfig& base) {
  const auto axis = sweep_axis_name(axis_spec);
  const auto eq = axis_spec.find('=');
  std::vector<std::string> values;
  if (eq != std::string::npos) values = split(axis_spec.substr(eq + 1), ',');
  auto defaults = [&](std::vector<std::string> d) {
    if (values.empty()) values = std::move(d);
  };
  std::vector<SweepPoint> out;
  if (axis == "alpha_ce") {
    defaults({"0", "0.1", "0.2", "0.5", "1.0"});
    for (const auto& v : values) {
      auto c = base;
      c.alpha_ce = parse_number(v, "alpha_ce");
      out.push_back({v, c.alpha_ce == 0.0 ? "SR only" : "alpha_ce=" + v, c});
    }
    auto ce = base;
    ce.alpha_ce = 1.0;
    ce.alpha = 0.0;
    out.push_back({"ce_only", "CE only", ce});
  } else if (axis == "loss_comb") {
    defaults({"ce+sr", "ce+fm", "ce+sr+fm"});
    for (const auto& v : values) {
      auto c = base;
      if (v == "ce+sr") {
        c.alpha = base.alpha > 0.0 ? base.alpha : 1.0;
        c.beta = 0.0;
      } else if (v == "ce+fm") {
        c.alpha = 0.0;
        c.beta = 1.0;
      } else if (v == "ce+sr+fm") {
        c.alpha = base.alpha > 0.0 ? base.alpha : 1.0;
        c.beta = 1.0;
      } else {
        throw ConfigError("loss_comb: unknown combination '" + v + "' (use ce+sr, ce+fm, ce+sr+fm)");
      }
      out.push_back({v, v, c});
    }
  } else if (axis == "matching_loss") {
    defaults({"mse", "neg_cosine", "cross_entropy"});
    for (const auto& v : values) {
      auto c = base;
      c.matching_loss = parse_loss_kind(v);
      if (!is_logit_matching(c.matching_loss)) throw ConfigError("matching_loss: '" + v + "' is not a logits matching loss");
      c.alpha = c.matching_loss == LossKind::neg_cosine ? 10.0 : 1.0;
      out.push_back({v, v, c});
    }
  } else if (axis == "connector_depth") {
    defaults({"1", "2", "3"});
    for (const auto& v : values) {
      auto c = base;
      const double d = parse_number(v, "connector_depth");
      if (d != 1.0 && d != 2.0 && d != 3.0) throw ConfigError("connector_depth: must be 1, 2 or 3, got " + v);
      c.connector_depth = static_cast<std::size_t>(d);
      out.push_back({v, "depth=" + v, c});
    }
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "' (use alpha_ce, loss_comb, matching_loss, connector_depth)");
  }
  for (const auto& p : out) p.config.validate();
  return out;
}

std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::string out = "axis,value,label,strategy,runs,mean_test_acc,std_test_acc,mean_train_acc,std_train_acc\n";
  for (const auto& r : rows) {
    out += axis + "," + r.point.value + "," + r.point.label + "," + std::string(to_string(r.point.config.strategy)) +
           "," + std::to_string(r.agg.runs) + "," + format_double(r.agg.mean_test_acc) + "," +
           format_double(r.agg.std_test_acc) + "," + format_double(r.agg.mean_train_acc) + "," +
           format_double(r.agg.std_train_acc) + "\n";
  }
  return out;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& axis_spec, std::size_t workers) {
  if (!cfg.distill) throw ConfigError("distill: required for the sweep command");
  const auto axis = sweep_axis_name(axis_spec);
  const auto points = sweep_points(axis_spec, *cfg.distill);
  std::vector<std::filesystem::path> dirs;
  for (const auto& p : points) dirs.push_back(cfg.output_dir / axis / slug(p.value));
  const auto runs = run_points(cfg, points, dirs, workers);
  std::vector<SweepRow> rows;
  const std::size_t seeds = cfg.seeds.size();
  for (std::size_t i = 0; i < points.size(); ++i) {
    SweepRow row{points[i], {runs.begin() + static_cast<std::ptrdiff_t>(i * seeds),
                             runs.begin() + static_cast<std::ptrdiff_t>((i + 1) * seeds)}, {}};
    row.agg = aggregate(row.runs);
    rows.push_back(std::move(row));
  }
  write_text(cfg.output_dir / ("sweep_" + axis + ".csv"), sweep_csv(axis, rows));
  return rows;
}

std::size_t write_report(const std::filesystem::path& runs, const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(runs, ec)) throw ConfigError("--runs: " + runs.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (auto it = fs::recursive_directory_iterator(runs, ec); !ec && it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (it->path().filename() == "summary.json" && fs::exists(it->path().parent_path() / "metrics.csv")) {
      dirs.push_back(it->path().parent_path());
    }
  }
  if (ec) throw IoError("cannot scan " + runs.string() + ": " + ec.message());
  if (dirs.empty()) throw ConfigError("no runs found under " + runs.string());
  std::sort(dirs.begin(), dirs.end());

  struct Run {
    std::string name, label, strategy, seed;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
  };
  std::vector<Run> loaded;
  std::vector<std::string> terms;  // loss term columns in first-seen order
  const std::set<std::string> fixed{"epoch", "train_acc", "test_acc", "frob_dist", "lr"};
  for (const auto& d : dirs) {
    Run r;
    r.name = fs::relative(d, runs).generic_string();
    json summary;
    try {
      summary = json::parse(read_text(d / "summary.json"));
      r.label = summary.at("label").get<std::string>();
      r.strategy = summary.at("strategy").get<std::string>();
      r.seed = std::to_string(summary.at("seed").get<std::uint64_t>());
    } catch (const json::exception& e) {
      throw IoError((d / "summary.json").string() + ": " + e.what());
    }
    std::istringstream in(read_text(d / "metrics.csv"));
    std::string line;
    if (!std::getline(in, line)) throw IoError((d / "metrics.csv").string() + ": empty");
    r.header = split(line, ',');
    for (const auto& h : r.header)
      if (!fixed.count(h) && std::find(terms.begin(), terms.end(), h) == terms.end()) terms.push_back(h);
    while (std::getline(in, line))
      if (!line.empty()) r.rows.push_back(split(line, ','));
    loaded.push_back(std::move(r));
  }

  std::vector<std::string> columns{"epoch"};
  columns.insert(columns.end(), terms.begin(), terms.end());
  for (const char* c : {"train_acc", "test_acc", "frob_dist", "lr"}) columns.push_back(c);
  std::string text = "run,label,strategy,seed";
  for (const auto& c : columns) text += "," + c;
  text += "\n";

  struct Final {
    std::vector<double> test, train;
    std::string strategy;
  };
  std::map<std::string, Final> finals;
  for (const auto& r : loaded) {
    std::map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < r.header.size(); ++k) index[r.header[k]] = k;
    for (const auto& row : r.rows) {
      text += r.name + "," + r.label + "," + r.strategy + "," + r.seed;
      for (const auto& c : columns) {
        text += ",";
        auto it = index.find(c);
        if (it != index.end() && it->second < row.size()) text += row[it->second];
      }
      text += "\n";
    }
    if (!r.rows.empty()) {
      auto& f = finals[r.label];
      f.strategy = r.strategy;
      f.test.push_back(parse_number(r.rows.back().at(index.at("test_acc")), "test_acc"));
      f.train.push_back(parse_number(r.rows.back().at(index.at("train_acc")), "train_acc"));
    }
  }
  write_text(out, text);

  std::string agg = "label,strategy,runs,mean_test_acc,std_test_acc,mean_train_acc,std_train_acc\n";
  for (const auto& [label, f] : finals) {
    std::vector<RunSummary> rs;
    for (std::size_t i = 0; i < f.test.size(); ++i) {
      RunSummary s;
      s.final_test_acc = f.test[i];
      s.final_train_acc = f.train[i];
      rs.push_back(s);
    }
    const auto a = aggregate(rs);
    agg += label + "," + f.strategy + "," + std::to_string(a.runs) + "," + format_double(a.mean_test_acc) + "," +
           format_double(a.std_test_acc) + "," + format_double(a.mean_train_acc) + "," +
           format_double(a.std_train_acc) + "\n";
  }
  auto agg_path = out;
  agg_path.replace_filename(out.stem().string() + "_aggregate.csv");
  write_text(agg_path, agg);
  return loaded.size();
}

}  // namespace distill_lab
