#include "cli/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bls::cli {

using nlohmann::json;

namespace {

// Line of the first occurrence of "key" followed by a colon, or 0.
int line_of_key(const std::string& text, const std::string& key) {
  const std::string quoted = json(key).dump();
  std::size_t pos = 0;
  while ((pos = text.find(quoted, pos)) != std::string::npos) {
    std::size_t after = pos + quoted.size();
    while (after < text.size() && std::isspace(static_cast<unsigned char>(text[after]))) ++after;
    if (after < text.size() && text[after] == ':') {
      return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
    }
    pos = after;
  }
  return 0;
}

class Section {
 public:
  Section(const json& j, std::string path, const std::string& text)
      : j_(j), path_(std::move(path)), text_(text) {
    if (!j_.is_object()) fail(path_.empty() ? "top level must be a JSON object" : "must be an object");
  }

  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) {
        const std::string full = qualify(key);
        const int line = line_of_key(text_, key);
        throw ConfigError("unknown key '" + full + "'" +
                          (line > 0 ? " at line " + std::to_string(line) : std::string()));
      }
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* get(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  Section sub(const std::string& key) {
    const json* v = get(key);
    static const json empty = json::object();
    return Section(v ? *v : empty, qualify(key), text_);
  }

  void number(const std::string& key, double& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) fail_key(key, "must be a number");
      out = v->get<double>();
    }
  }

  template <class Int>
  void integer(const std::string& key, Int& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer()) fail_key(key, "must be an integer");
      if (v->is_number_unsigned()) {
        out = static_cast<Int>(v->get<std::uint64_t>());
      } else {
        const auto x = v->get<std::int64_t>();
        if (x < 0 && std::is_unsigned_v<Int>) fail_key(key, "must be nonnegative");
        out = static_cast<Int>(x);
      }
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = get(key)) {
      if (!v->is_boolean()) fail_key(key, "must be true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) fail_key(key, "must be a string");
      out = v->get<std::string>();
    }
  }

  void optional_number(const std::string& key, std::optional<double>& out) {
    if (has(key)) {
      double x = 0.0;
      number(key, x);
      out = x;
    } else {
      used_.insert(key);
    }
  }

  /// A number or an array of numbers.
  void vector(const std::string& key, std::optional<std::vector<double>>& out) {
    if (const json* v = get(key)) {
      std::vector<double> xs;
      if (v->is_number()) {
        xs.push_back(v->get<double>());
      } else if (v->is_array()) {
        for (const json& e : *v) {
          if (!e.is_number()) fail_key(key, "must contain only numbers");
          xs.push_back(e.get<double>());
        }
      } else {
        fail_key(key, "must be a number or an array of numbers");
      }
      out = std::move(xs);
    }
  }

  [[noreturn]] void fail_key(const std::string& key, const std::string& what) const {
    const int line = line_of_key(text_, key);
    throw ConfigError("'" + qualify(key) + "' " + what +
                      (line > 0 ? " (line " + std::to_string(line) + ")" : std::string()));
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError((path_.empty() ? std::string("config") : "'" + path_ + "'") + " " + what);
  }

  std::string qualify(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  const std::string& text_;
  std::set<std::string> used_;
};

json parse_strict(const std::string& text) {
  // Duplicate keys are rejected; nlohmann would silently keep the last one.
  std::vector<std::set<std::string>> keys;
  std::string duplicate;
  json::parser_callback_t cb = [&](int, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::object_start) keys.emplace_back();
    if (event == json::parse_event_t::object_end && !keys.empty()) keys.pop_back();
    if (event == json::parse_event_t::key && !keys.empty()) {
      const auto k = parsed.get<std::string>();
      if (!keys.back().insert(k).second && duplicate.empty()) duplicate = k;
    }
    return true;
  };
  json j;
  try {
    j = json::parse(text, cb, /*allow_exceptions=*/true, /*ignore_comments=*/false);
  } catch (const json::parse_error& e) {
    // Byte offset -> line.
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    throw ConfigError("invalid JSON at line " + std::to_string(line) + ": " + e.what());
  }
  if (!duplicate.empty()) {
    throw ConfigError("duplicate key '" + duplicate + "' at line " +
                      std::to_string(line_of_key(text, duplicate)));
  }
  return j;
}

void read_problem(Section& s, ProblemConfig& p) {
  s.string("name", p.name);
  if (p.name.empty()) s.fail("needs a 'name'");
  s.vector("p0", p.p0);
  if (p.name == "quadratic") {
    s.integer("m", p.m);
    p.n = p.m;
    s.integer("n", p.n);
  } else if (p.name == "cos") {
    // p0 covers the starting point.
  } else if (p.name == "ridge" || p.name == "diag") {
    if (p.name == "diag") p.ridge.features = 10;
    s.integer("features", p.ridge.features);
    s.integer("samples", p.ridge.samples);
    s.number("weight_scale", p.ridge.weight_scale);
    s.number("noise", p.ridge.noise);
    std::string upper = "squared";
    s.string("upper_loss", upper);
    if (upper == "squared") {
      p.ridge.upper = RidgeUpper::squared;
    } else if (upper == "logistic") {
      p.ridge.upper = RidgeUpper::logistic;
    } else {
      s.fail_key("upper_loss", "must be 'squared' or 'logistic'");
    }
  } else if (p.name == "lqr") {
    s.integer("state_dim", p.lqr.state_dim);
    s.integer("control_dim", p.lqr.control_dim);
    s.integer("horizon", p.lqr.horizon);
    s.optional_number("u_lim", p.lqr.u_lim);
    s.optional_number("barrier_alpha", p.lqr.barrier_alpha);
    s.number("dt", p.lqr.dt);
    s.number("control_weight", p.lqr.control_weight);
  } else {
    s.fail_key("name", "must be one of quadratic, cos, ridge, diag, lqr");
  }
}

void read_lower(Section& s, LowerConfig& c) {
  s.number("tol", c.tol);
  s.integer("max_iter", c.max_iter);
  s.number("backtrack", c.backtrack);
  s.number("sufficient_decrease", c.sufficient_decrease);
  s.integer("max_backtracks", c.max_backtracks);
}

void read_upper(Section& s, UpperConfig& c) {
  s.number("gd_step", c.gd_step);
  s.integer("gd_max_halvings", c.gd_max_halvings);
  s.number("lambda0", c.lambda0);
  s.number("lambda_increase", c.lambda_increase);
  s.number("lambda_decrease", c.lambda_decrease);
  s.number("lambda_min", c.lambda_min);
  s.number("lambda_max", c.lambda_max);
  s.number("max_step", c.max_step);
  s.number("armijo", c.armijo);
  s.integer("max_backtracks", c.max_backtracks);
  s.integer("max_iter", c.max_iter);
  s.number("grad_tol", c.grad_tol);
  s.number("f_tol", c.f_tol);
  std::string mode = "general", strategy = "fast";
  s.string("mode", mode);
  s.string("strategy", strategy);
  if (mode == "general") {
    c.mode = HessianMode::general;
  } else if (mode == "no_upper_mixed") {
    c.mode = HessianMode::no_upper_mixed;
  } else {
    s.fail_key("mode", "must be 'general' or 'no_upper_mixed'");
  }
  if (strategy == "fast") {
    c.strategy = HessianStrategy::fast;
  } else if (strategy == "full") {
    c.strategy = HessianStrategy::full;
  } else {
    s.fail_key("strategy", "must be 'fast' or 'full'");
  }
}

template <class F>
void validated(Section& s, const std::string& key, F&& check) {
  try {
    check();
  } catch (const bls::Error& e) {
    s.fail_key(key, std::string("is invalid: ") + e.what());
  }
}

}  // namespace

UpperMethod parse_method(const std::string& s) {
  if (s == "gd") return UpperMethod::gradient_descent;
  if (s == "newton") return UpperMethod::newton;
  throw ConfigError("unknown method '" + s + "' (expected gd or newton)");
}

RunConfig parse_config(const std::string& text) {
  const json j = parse_strict(text);
  RunConfig c;
  Section top(j, "", text);

  if (!top.has("problem")) top.fail("needs a 'problem' section");
  {
    Section problem = top.sub("problem");
    read_problem(problem, c.problem);
  }

  if (const json* m = top.get("methods")) {
    if (!m->is_array() || m->empty()) top.fail_key("methods", "must be a nonempty array");
    c.methods.clear();
    for (const json& e : *m) {
      if (!e.is_string()) top.fail_key("methods", "must contain strings");
      parse_method(e.get<std::string>());
      c.methods.push_back(e.get<std::string>());
    }
  }
  if (const json* s = top.get("seeds")) {
    if (!s->is_array() || s->empty()) top.fail_key("seeds", "must be a nonempty array");
    c.seeds.clear();
    for (const json& e : *s) {
      if (!e.is_number_unsigned()) top.fail_key("seeds", "must contain nonnegative integers");
      c.seeds.push_back(e.get<std::uint64_t>());
    }
  }

  {
    Section lower = top.sub("lower");
    read_lower(lower, c.lower);
    validated(top, "lower", [&] { c.lower.validate(); });
  }
  {
    Section upper = top.sub("upper");
    read_upper(upper, c.upper);
    validated(top, "upper", [&] { c.upper.validate(); });
  }
  {
    Section diff = top.sub("diff");
    diff.number("first_step", c.diff.first_step);
    diff.number("second_step", c.diff.second_step);
    validated(top, "diff", [&] { c.diff.validate(); });
  }
  {
    Section g = top.sub("gradcheck");
    g.vector("p", c.gradcheck.p);
    g.number("oracle_tol", c.gradcheck.oracle_tol);
    g.boolean("expect_inexact", c.gradcheck.expect_inexact);
    Section tol = g.sub("tolerances");
    tol.number("jacobian", c.gradcheck.tol_jacobian);
    tol.number("hessian", c.gradcheck.tol_hessian);
    tol.number("gradient", c.gradcheck.tol_gradient);
    tol.number("total_hessian", c.gradcheck.tol_total_hessian);
  }
  {
    Section b = top.sub("bounds");
    b.vector("p", c.bounds.p);
    std::optional<std::vector<double>> deltas;
    b.vector("deltas", deltas);
    if (deltas) {
      if (deltas->empty()) b.fail_key("deltas", "must be nonempty");
      for (double d : *deltas) {
        if (!(d > 0.0)) b.fail_key("deltas", "must be positive");
      }
      c.bounds.deltas = *deltas;
    }
    b.integer("trials", c.bounds.trials);
    if (c.bounds.trials < 1) b.fail_key("trials", "must be at least 1");
    b.number("eps_max", c.bounds.eps_max);
    if (!(c.bounds.eps_max > 0.0)) b.fail_key("eps_max", "must be positive");
    b.number("oracle_tol", c.bounds.oracle_tol);
  }
  {
    Section l = top.sub("landscape");
    l.string("method", c.landscape.method);
    try {
      parse_method(c.landscape.method);
    } catch (const ConfigError&) {
      l.fail_key("method", "must be 'gd' or 'newton'");
    }
    l.integer("grid", c.landscape.grid);
    if (c.landscape.grid < 2) l.fail_key("grid", "must be at least 2");
    l.number("span", c.landscape.span);
    if (!(c.landscape.span > 0.0)) l.fail_key("span", "must be positive");
  }
  {
    Section o = top.sub("output");
    o.string("dir", c.out_dir);
    std::string fmt = "csv";
    o.string("format", fmt);
    try {
      c.format = parse_format(fmt);
    } catch (const std::invalid_argument&) {
      o.fail_key("format", "must be 'csv' or 'json'");
    }
  }
  top.boolean("timing", c.timing);
  c.upper.record_time = c.timing;
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

ProblemInstance build_instance(const ProblemConfig& cfg, std::uint64_t seed) {
  ProblemInstance inst = [&]() -> ProblemInstance {
    if (cfg.name == "quadratic") return make_quadratic_toy(cfg.m, cfg.n, seed);
    if (cfg.name == "cos") return make_scalar_cos();
    if (cfg.name == "ridge" || cfg.name == "diag") {
      RidgeOptions o = cfg.ridge;
      o.seed = seed;
      return cfg.name == "ridge" ? make_ridge(o) : make_diag_ridge(o);
    }
    if (cfg.name == "lqr") {
      LqrOptions o = cfg.lqr;
      o.seed = seed;
      return make_inverse_lqr(o);
    }
    throw ConfigError("unknown problem '" + cfg.name + "'");
  }();
  if (cfg.p0) {
    const auto& v = *cfg.p0;
    const Index n = inst.problem.dim_p();
    if (v.size() == 1) {
      inst.p0 = Vector::Constant(n, v[0]);
    } else if (static_cast<Index>(v.size()) == n) {
      inst.p0 = Eigen::Map<const Vector>(v.data(), n);
    } else {
      throw ConfigError("'problem.p0' has " + std::to_string(v.size()) + " entries, expected 1 or " +
                        std::to_string(n));
    }
  }
  return inst;
}

}  // namespace bls::cli
