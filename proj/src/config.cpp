#include "ncode/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ncode {

using nlohmann::json;

namespace {

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(end), '\n');
    throw ConfigError(what + ": malformed JSON at line " + std::to_string(line) + ": " + e.what());
  }
}

// Reads keys of one object and rejects any it was not asked about.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) {
    known_.insert(key);
    return j_.contains(key);
  }

  const json& at(const std::string& key) { return j_.at(key); }
  std::string path(const std::string& key) const { return where_ + "." + key; }

  void read(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
    out = v.get<double>();
  }

  void read(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(path(key) + ": expected a non-negative integer");
    out = v.get<std::size_t>();
  }

  void read(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(path(key) + ": expected true or false");
    out = v.get<bool>();
  }

  void read(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
    out = v.get<std::string>();
  }

  template <class E, class F>
  void read_enum(const std::string& key, E& out, F from_string) {
    std::string s;
    if (!has(key)) return;
    read(key, s);
    try {
      out = from_string(s);
    } catch (const Error& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (known_.count(item.key())) continue;
      std::string valid;
      for (const auto& k : known_) valid += (valid.empty() ? "" : ", ") + k;
      throw ConfigError(where_ + ": unknown key '" + item.key() + "' (valid: " + valid + ")");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> known_;
};

json mlp_json(const MlpSpec& m) {
  return {{"layers", m.layer_sizes},
          {"activation", to_string(m.activation)},
          {"final_activation", to_string(m.final_activation)}};
}

void read_mlp(Reader& parent, const std::string& key, MlpSpec& m) {
  if (!parent.has(key)) return;
  Reader r(parent.at(key), parent.path(key));
  if (r.has("layers")) {
    const json& v = r.at("layers");
    if (!v.is_array()) throw ConfigError(r.path("layers") + ": expected an array");
    m.layer_sizes.clear();
    for (const auto& e : v) {
      if (!e.is_number_unsigned()) throw ConfigError(r.path("layers") + ": expected integers");
      m.layer_sizes.push_back(e.get<std::size_t>());
    }
  }
  r.read_enum("activation", m.activation, activation_from_string);
  r.read_enum("final_activation", m.final_activation, activation_from_string);
  r.finish();
}

json task_json(const TaskSpec& t) {
  return {{"name", to_string(t.name)},
          {"n_train", t.n_train},
          {"n_eval", t.n_eval},
          {"range_lo", t.range_lo},
          {"range_hi", t.range_hi},
          {"r1", t.r1},
          {"r2", t.r2},
          {"r3", t.r3},
          {"vdp_mu_true", t.vdp_mu_true},
          {"vdp_mu_init", t.vdp_mu_init},
          {"vdp_x0", t.vdp_x0},
          {"vdp_horizon", t.vdp_horizon},
          {"vdp_n_obs", t.vdp_n_obs},
          {"mem_bits", t.mem_bits},
          {"mem_patterns", t.mem_patterns},
          {"mem_repeats", t.mem_repeats},
          {"mem_presentation", t.mem_presentation},
          {"mem_query", t.mem_query},
          {"mem_degradation", t.mem_degradation},
          {"ae_data_dim", t.ae_data_dim},
          {"ae_factors", t.ae_factors}};
}

void read_task(Reader& r, TaskSpec& t) {
  r.has("name");
  r.read("n_train", t.n_train);
  r.read("n_eval", t.n_eval);
  r.read("range_lo", t.range_lo);
  r.read("range_hi", t.range_hi);
  r.read("r1", t.r1);
  r.read("r2", t.r2);
  r.read("r3", t.r3);
  r.read("vdp_mu_true", t.vdp_mu_true);
  r.read("vdp_mu_init", t.vdp_mu_init);
  r.read("vdp_x0", t.vdp_x0);
  r.read("vdp_horizon", t.vdp_horizon);
  r.read("vdp_n_obs", t.vdp_n_obs);
  r.read("mem_bits", t.mem_bits);
  r.read("mem_patterns", t.mem_patterns);
  r.read("mem_repeats", t.mem_repeats);
  r.read("mem_presentation", t.mem_presentation);
  r.read("mem_query", t.mem_query);
  r.read("mem_degradation", t.mem_degradation);
  r.read("ae_data_dim", t.ae_data_dim);
  r.read("ae_factors", t.ae_factors);
  r.finish();
}

json model_json(const DynamicsSpec& s) {
  return {{"x_dim", s.x_dim},
          {"f",
           {{"kind", to_string(s.f_kind)},
            {"mlp", mlp_json(s.f_mlp)},
            {"linear_nnz_per_row", s.linear_nnz_per_row},
            {"hebbian_activation", to_string(s.hebbian_activation)}}},
          {"g", {{"kind", to_string(s.g_kind)}, {"mlp", mlp_json(s.g_mlp)}}},
          {"gamma",
           {{"kind", to_string(s.gamma_kind)},
            {"mlp", mlp_json(s.gamma_mlp)},
            {"input_dim", s.gamma_input_dim}}}};
}

void read_model(Reader& r, DynamicsSpec& s) {
  r.read("x_dim", s.x_dim);
  if (r.has("f")) {
    Reader f(r.at("f"), r.path("f"));
    f.read_enum("kind", s.f_kind, field_kind_from_string);
    read_mlp(f, "mlp", s.f_mlp);
    f.read("linear_nnz_per_row", s.linear_nnz_per_row);
    f.read_enum("hebbian_activation", s.hebbian_activation, activation_from_string);
    f.finish();
  }
  if (r.has("g")) {
    Reader g(r.at("g"), r.path("g"));
    g.read_enum("kind", s.g_kind, control_kind_from_string);
    read_mlp(g, "mlp", s.g_mlp);
    g.finish();
  }
  if (r.has("gamma")) {
    Reader g(r.at("gamma"), r.path("gamma"));
    g.read_enum("kind", s.gamma_kind, gamma_kind_from_string);
    read_mlp(g, "mlp", s.gamma_mlp);
    g.read("input_dim", s.gamma_input_dim);
    g.finish();
  }
  r.finish();
}

json solver_json(const SolverConfig& c) {
  return {{"method", to_string(c.method)}, {"rtol", c.rtol},
          {"atol", c.atol},                {"fixed_dt", c.fixed_dt},
          {"max_steps", c.max_steps},      {"dense_record", c.dense_record}};
}

void read_solver(Reader& r, SolverConfig& c) {
  r.read_enum("method", c.method, method_from_string);
  r.read("rtol", c.rtol);
  r.read("atol", c.atol);
  r.read("fixed_dt", c.fixed_dt);
  r.read("max_steps", c.max_steps);
  r.read("dense_record", c.dense_record);
  r.finish();
}

json train_json(const TrainOptions& t, std::uint64_t seed) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"optimizer", to_string(t.method)},
          {"lr", t.lr},
          {"threads", t.threads},
          {"max_steps", t.max_steps},
          {"plateau_patience", t.plateau_patience},
          {"shuffle", t.shuffle},
          {"eval_every", t.eval_every},
          {"seed", seed}};
}

void read_train(Reader& r, TrainOptions& t, std::uint64_t& seed) {
  r.read("epochs", t.epochs);
  r.read("batch_size", t.batch_size);
  r.read_enum("optimizer", t.method, opt_method_from_string);
  r.read("lr", t.lr);
  r.read("threads", t.threads);
  r.read("max_steps", t.max_steps);
  r.read("plateau_patience", t.plateau_patience);
  r.read("shuffle", t.shuffle);
  r.read("eval_every", t.eval_every);
  std::size_t s = seed;
  r.read("seed", s);
  seed = s;
  r.finish();
}

json grad_check_json(const GradCheckSettings& g) {
  return {{"loss", g.loss},
          {"mutation", g.mutation},
          {"examples", g.examples},
          {"step", g.step},
          {"threshold", g.threshold},
          {"floor", g.floor},
          {"coords", g.coords}};
}

void read_grad_check(Reader& r, GradCheckSettings& g) {
  r.read("loss", g.loss);
  r.read("mutation", g.mutation);
  r.read("examples", g.examples);
  r.read("step", g.step);
  r.read("threshold", g.threshold);
  r.read("floor", g.floor);
  r.read("coords", g.coords);
  r.finish();
}

json config_json(const ExperimentConfig& c) {
  return {{"task", task_json(c.task)},
          {"variant", to_string(c.variant)},
          {"model", model_json(c.model)},
          {"decoder", mlp_json(c.decoder)},
          {"horizon", c.horizon},
          {"solver", solver_json(c.solver)},
          {"engine", to_string(c.engine)},
          {"train", train_json(c.train, c.seed)},
          {"out_dir", c.out_dir},
          {"grad_check", grad_check_json(c.grad_check)}};
}

ExperimentConfig config_from_json(const json& j, const std::string& where) {
  Reader top(j, where);
  if (!top.has("task")) throw ConfigError(where + ": missing 'task' block");
  const json& task = top.at("task");
  std::string name;
  {
    Reader t(task, top.path("task"));
    if (!t.has("name")) throw ConfigError(t.path("name") + ": required");
    t.read("name", name);
  }
  ModelVariant variant = ModelVariant::ncode;
  top.read_enum("variant", variant, model_variant_from_string);

  ExperimentConfig cfg;
  try {
    cfg = default_config(task_from_string(name), variant);
  } catch (const Error& e) {
    throw ConfigError(top.path("task.name") + ": " + e.what());
  }

  Reader t(task, top.path("task"));
  read_task(t, cfg.task);
  if (top.has("model")) {
    Reader m(top.at("model"), top.path("model"));
    read_model(m, cfg.model);
  }
  read_mlp(top, "decoder", cfg.decoder);
  top.read("horizon", cfg.horizon);
  if (top.has("solver")) {
    Reader s(top.at("solver"), top.path("solver"));
    read_solver(s, cfg.solver);
  }
  top.read_enum("engine", cfg.engine, engine_from_string);
  if (top.has("train")) {
    Reader tr(top.at("train"), top.path("train"));
    read_train(tr, cfg.train, cfg.seed);
  }
  top.read("out_dir", cfg.out_dir);
  if (top.has("grad_check")) {
    Reader g(top.at("grad_check"), top.path("grad_check"));
    read_grad_check(g, cfg.grad_check);
  }
  top.finish();
  return cfg;
}

std::string format_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_exact(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": expected a decimal string");
  const std::string s = v.get<std::string>();
  errno = 0;
  char* end = nullptr;
  double d = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || (errno == ERANGE && std::isinf(d)))
    throw ConfigError(where + ": bad number '" + s + "'");
  return d;
}

json vec_json(const Vec& v) {
  json a = json::array();
  for (double d : v) a.push_back(format_exact(d));
  return a;
}

Vec read_vec(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  Vec out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(parse_exact(e, where));
  return out;
}

std::uint64_t parse_u64(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": expected a decimal string");
  const std::string s = v.get<std::string>();
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
    throw ConfigError(where + ": bad integer '" + s + "'");
  errno = 0;
  auto n = std::strtoull(s.c_str(), nullptr, 10);
  if (errno == ERANGE) throw ConfigError(where + ": integer out of range");
  return n;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  auto cfg = config_from_json(parse_json(text, "config"), "config");
  cfg.validate();
  return cfg;
}

std::string dump_config(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

ExperimentConfig load_config(const std::filesystem::path& path) {
  auto text = read_text_file(path);
  try {
    return parse_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  write_text_file(path, dump_config(cfg));
}

Vec Checkpoint::params() const {
  Vec p = mu;
  p.insert(p.end(), head.begin(), head.end());
  return p;
}

Checkpoint make_checkpoint(const ExperimentConfig& cfg, std::span<const double> params,
                           std::size_t head_dim, const Rng& rng, std::size_t epoch) {
  if (head_dim > params.size()) throw ShapeError("checkpoint: head larger than parameter vector");
  Checkpoint ck;
  ck.config = cfg;
  std::size_t split = params.size() - head_dim;
  ck.mu.assign(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(split));
  ck.head.assign(params.begin() + static_cast<std::ptrdiff_t>(split), params.end());
  ck.rng = rng;
  ck.epoch = epoch;
  return ck;
}

std::string dump_checkpoint(const Checkpoint& ck) {
  json j = {{"format_version", ck.format_version},
            {"config", config_json(ck.config)},
            {"mu", vec_json(ck.mu)},
            {"head", vec_json(ck.head)},
            {"rng",
             {{"seed", std::to_string(ck.rng.seed())},
              {"counter", std::to_string(ck.rng.counter())}}},
            {"epoch", ck.epoch}};
  return j.dump(2) + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
  json j = parse_json(text, "checkpoint");
  if (!j.is_object()) throw ConfigError("checkpoint: expected an object");
  if (!j.contains("format_version") || !j.at("format_version").is_number_integer())
    throw MigrationError("checkpoint: missing format_version");
  auto version = j.at("format_version").get<long long>();
  if (version != kCheckpointVersion)
    throw MigrationError("checkpoint format_version " + std::to_string(version) +
                         " is not supported (expected " + std::to_string(kCheckpointVersion) +
                         ")");

  Reader r(j, "checkpoint");
  Checkpoint ck;
  r.has("format_version");
  if (!r.has("config")) throw ConfigError("checkpoint: missing config");
  ck.config = config_from_json(r.at("config"), "checkpoint.config");
  ck.config.validate();
  if (r.has("mu")) ck.mu = read_vec(r.at("mu"), "checkpoint.mu");
  if (r.has("head")) ck.head = read_vec(r.at("head"), "checkpoint.head");
  if (r.has("rng")) {
    Reader g(r.at("rng"), "checkpoint.rng");
    std::uint64_t seed = 0, counter = 0;
    if (g.has("seed")) seed = parse_u64(g.at("seed"), "checkpoint.rng.seed");
    if (g.has("counter")) counter = parse_u64(g.at("counter"), "checkpoint.rng.counter");
    g.finish();
    ck.rng = Rng(seed, counter);
  }
  r.read("epoch", ck.epoch);
  r.finish();
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_text_file(path));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_text_file(path, dump_checkpoint(ck));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("write failed: " + path.string());
}

}  // namespace ncode
