#include "bdre/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bdre/error.hpp"

namespace bdre {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw Error(ErrorCode::ConfigError, path + ": " + what);
}

// Object view that remembers its path and rejects keys nobody asked about.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_, "expected a table");
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) fail(at(key), "missing");
        return j_.at(key);
    }

    double number(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_number()) fail(at(key), "expected a number");
        return v.get<double>();
    }
    double number(const std::string& key, double fallback) { return has(key) ? number(key) : (seen_.insert(key), fallback); }

    double positive(const std::string& key, double fallback) {
        const double v = number(key, fallback);
        if (!(v > 0.0)) fail(at(key), "must be positive");
        return v;
    }

    std::size_t count(const std::string& key, std::size_t fallback) {
        seen_.insert(key);
        if (!has(key)) return fallback;
        const json& v = j_.at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
            fail(at(key), "expected a nonnegative integer");
        }
        return v.get<std::size_t>();
    }

    bool flag(const std::string& key, bool fallback) {
        seen_.insert(key);
        if (!has(key)) return fallback;
        if (!j_.at(key).is_boolean()) fail(at(key), "expected true or false");
        return j_.at(key).get<bool>();
    }

    std::string text(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_string()) fail(at(key), "expected a string");
        return v.get<std::string>();
    }
    std::string text(const std::string& key, std::string fallback) { return has(key) ? text(key) : (seen_.insert(key), fallback); }

    std::vector<double> numbers(const std::string& key) {
        const json& v = raw(key);
        if (v.is_number()) return {v.get<double>()};
        if (!v.is_array()) fail(at(key), "expected a number or a list of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) fail(at(key) + "[" + std::to_string(i) + "]", "expected a number");
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    Section sub(const std::string& key) { return Section(raw(key), at(key)); }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) fail(at(key), "unknown key");
        }
    }

    const std::string& path() const { return path_; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

Param parse_param(const json& v, const std::string& path) {
    if (v.is_number()) return Param::constant(v.get<double>());
    Section s(v, path);
    const double c = s.number("coord");
    if (c < 0 || c != std::floor(c)) fail(s.at("coord"), "expected a coordinate index");
    Param p = Param::env(static_cast<int>(c), s.number("scale", 1.0), s.number("offset", 0.0));
    s.finish();
    return p;
}

VariabilityConfig parse_variability(Section s) {
    VariabilityConfig b;
    b.kind = s.text("kind", "constant");
    if (b.kind == "constant") {
        b.value = s.positive("value", 1.0);
    } else if (b.kind == "geometric") {
        b.a = s.positive("a", 1.0);
    } else if (b.kind == "table") {
        b.table = s.numbers("values");
        if (b.table.empty()) fail(s.at("values"), "needs at least one entry");
        for (double x : b.table) {
            if (!(x > 0.0)) fail(s.at("values"), "entries must be positive");
        }
    } else {
        fail(s.at("kind"), "expected constant, geometric or table");
    }
    s.finish();
    return b;
}

JumpEnvConfig parse_jump(Section s) {
    JumpEnvConfig env;
    const json& states = s.raw("states");
    if (!states.is_array() || states.empty()) fail(s.at("states"), "expected a nonempty list");
    for (std::size_t i = 0; i < states.size(); ++i) {
        Section st(states[i], s.at("states") + "[" + std::to_string(i) + "]");
        EnvState e;
        e.label = st.text("label", "z" + std::to_string(i + 1));
        e.coords = st.numbers("coords");
        st.finish();
        env.states.push_back(std::move(e));
    }
    const json& T = s.raw("T");
    const std::size_t m = env.states.size();
    if (!T.is_array() || T.size() != m) fail(s.at("T"), "expected " + std::to_string(m) + " rows");
    env.T.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) {
        const std::string row = s.at("T") + "[" + std::to_string(i) + "]";
        if (!T[i].is_array() || T[i].size() != m) fail(row, "expected " + std::to_string(m) + " entries");
        double off = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (!T[i][j].is_number()) fail(row, "expected numbers");
            const double x = T[i][j].get<double>();
            if (i != j) {
                if (x < 0.0) fail(row, "off-diagonal rates must be nonnegative");
                off += x;
            }
            env.T(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x;
        }
        // the diagonal is implied by the row
        env.T(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = -off;
    }
    s.finish();
    return env;
}

DiffusiveEnvConfig parse_diffusive(Section s) {
    DiffusiveEnvConfig d;
    d.example = s.text("example");
    Section p = s.sub("params");
    if (p.has("c")) d.params.c = p.numbers("c");
    if (p.has("sigma")) d.params.sigma = p.numbers("sigma");
    if (p.has("reflection")) d.params.reflection = p.numbers("reflection");
    if (p.has("lower")) d.params.lower = p.numbers("lower");
    d.params.upper = p.number("upper", kInf);
    d.params.jump_intensity = p.number("jump_intensity", 0.0);
    d.params.jump_mean = p.number("jump_mean", 1.0);
    p.finish();
    s.finish();
    return d;
}

}  // namespace

Variability VariabilityConfig::build() const {
    if (kind == "geometric") return geometric_variability(a);
    if (kind == "table") return table_variability(table);
    return constant_variability(value);
}

std::string VariabilityConfig::describe() const {
    std::ostringstream s;
    s.precision(12);
    if (kind == "geometric") {
        s << "geometric(" << a << ")";
    } else if (kind == "table") {
        s << "table(";
        for (std::size_t i = 0; i < table.size(); ++i) s << (i ? " " : "") << table[i];
        s << ")";
    } else {
        s << "constant(" << value << ")";
    }
    return s.str();
}

RunConfig parse_config(std::string_view text) {
    json root;
    try {
        root = json::parse(text.begin(), text.end(), nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ConfigError, std::string("syntax: ") + e.what());
    }
    RunConfig cfg;
    cfg.source_text = std::string(text);
    Section top(root, "");

    {
        Section m = top.sub("model");
        cfg.model_name = m.text("name");
        if (m.has("params")) {
            const json& params = m.raw("params");
            if (!params.is_object()) fail(m.at("params"), "expected a table");
            for (const auto& [key, value] : params.items()) {
                cfg.params[key] = parse_param(value, m.at("params") + "." + key);
            }
        }
        m.finish();
    }
    {
        Section e = top.sub("environment");
        if (e.has("beta")) cfg.beta = parse_variability(e.sub("beta"));
        const bool has_jump = e.has("jump"), has_diff = e.has("diffusive");
        if (has_jump && has_diff) {
            fail(e.path(), "both jump and diffusive environments are given; exactly one is allowed");
        }
        if (!has_jump && !has_diff) fail(e.path(), "needs a jump or a diffusive environment");
        if (has_jump) cfg.jump = parse_jump(e.sub("jump"));
        if (has_diff) cfg.diffusive = parse_diffusive(e.sub("diffusive"));
        e.finish();
    }
    if (top.has("sim")) {
        Section s = top.sub("sim");
        auto& sim = cfg.sim;
        sim.dt = s.positive("dt", sim.dt);
        sim.horizon = s.positive("horizon", sim.horizon);
        sim.burn_in = s.number("burn_in", sim.burn_in);
        if (sim.burn_in < 0.0) fail(s.at("burn_in"), "must be nonnegative");
        sim.replicas = s.count("replicas", sim.replicas);
        if (sim.replicas == 0) fail(s.at("replicas"), "must be at least 1");
        if (s.has("seed")) sim.seed = s.count("seed", 0);
        sim.max_events = s.count("max_events", sim.max_events);
        sim.n_cap = s.count("n_cap", sim.n_cap);
        sim.record_every = s.number("record_every", sim.record_every);
        sim.rate_cap = s.positive("rate_cap", sim.rate_cap);
        sim.speed_cap = s.positive("speed_cap", sim.speed_cap);
        sim.max_substeps = s.count("max_substeps", sim.max_substeps);
        if (sim.max_substeps == 0) fail(s.at("max_substeps"), "must be at least 1");
        sim.n0 = s.count("n0", sim.n0);
        if (cfg.is_jump()) {
            sim.z0 = s.count("z0", sim.z0);
        } else if (s.has("z0")) {
            sim.z0_point = s.numbers("z0");
        }
        if (!(sim.horizon > sim.burn_in)) fail(s.at("horizon"), "must exceed sim.burn_in");
        s.finish();
    }
    if (top.has("analysis")) {
        Section a = top.sub("analysis");
        auto& an = cfg.analysis;
        an.n_max = a.count("n_max", an.n_max);
        an.bins = a.count("bins", an.bins);
        an.balance_tol = a.positive("balance_tol", an.balance_tol);
        if (a.has("tv_tolerance")) an.tv_tolerance = a.positive("tv_tolerance", 0.0);
        if (a.has("rates")) {
            Section r = a.sub("rates");
            auto& rt = an.rates;
            rt.enabled = r.flag("enabled", true);
            rt.scenario = r.text("scenario", rt.scenario);
            if (rt.scenario != "auto" && rt.scenario != "exponential" && rt.scenario != "polynomial") {
                fail(r.at("scenario"), "expected auto, exponential or polynomial");
            }
            rt.probe_n_max = r.count("probe_n_max", rt.probe_n_max);
            rt.probe_points = r.count("probe_points", rt.probe_points);
            rt.env_coupling_replicas = r.count("env_coupling_replicas", rt.env_coupling_replicas);
            rt.coupling_replicas = r.count("coupling_replicas", rt.coupling_replicas);
            rt.start_n = r.count("start_n", rt.start_n);
            rt.slack = r.number("slack", rt.slack);
            rt.horizon = r.positive("horizon", rt.horizon);
            rt.busy_replicas = r.count("busy_replicas", rt.busy_replicas);
            rt.busy_series = r.flag("busy_series", rt.busy_series);
            if (r.has("hitting_starts")) {
                rt.hitting_starts.clear();
                for (double x : r.numbers("hitting_starts")) {
                    if (x < 0 || x != std::floor(x)) fail(r.at("hitting_starts"), "expected nonnegative integers");
                    rt.hitting_starts.push_back(static_cast<std::size_t>(x));
                }
            }
            rt.hitting_replicas = r.count("hitting_replicas", rt.hitting_replicas);
            rt.decay_replicas = r.count("decay_replicas", rt.decay_replicas);
            rt.decay_t_min = r.positive("decay_t_min", rt.decay_t_min);
            rt.decay_t_max = r.positive("decay_t_max", rt.decay_t_max);
            rt.decay_points = r.count("decay_points", rt.decay_points);
            rt.decay_n_cap = r.count("decay_n_cap", rt.decay_n_cap);
            rt.min_decay_exponent = r.number("min_decay_exponent", rt.min_decay_exponent);
            if (!(rt.decay_t_max > rt.decay_t_min)) fail(r.at("decay_t_max"), "must exceed decay_t_min");
            if (rt.decay_points < 2) fail(r.at("decay_points"), "needs at least 2 points");
            r.finish();
        }
        a.finish();
    }
    if (top.has("output")) {
        Section o = top.sub("output");
        cfg.output.dir = o.text("dir", cfg.output.dir);
        cfg.output.trajectory = o.flag("trajectory", cfg.output.trajectory);
        o.finish();
    }
    top.finish();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

void RunConfig::validate() const {
    if (sim.replicas > 1 && !sim.seed) fail("sim.seed", "required when sim.replicas > 1");
    if (jump && sim.z0 >= jump->states.size()) fail("sim.z0", "state index out of range");
}

ModelSpec RunConfig::build_model() const {
    try {
        return catalog(model_name, params, beta.build());
    } catch (const Error& e) {
        throw Error(ErrorCode::ConfigError, std::string("model: ") + e.what());
    }
}

EnvChainSpec RunConfig::build_jump_env() const {
    if (!jump) throw Error(ErrorCode::ConfigError, "environment.jump: not configured");
    return scaled_environment(jump->states, jump->T, beta.build());
}

DiffusiveExample RunConfig::build_diffusive() const {
    if (!diffusive) throw Error(ErrorCode::ConfigError, "environment.diffusive: not configured");
    return diffusive_example(diffusive->example, diffusive->params);
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    std::ostringstream s;
    s << std::hex;
    s.width(16);
    s.fill('0');
    s << value;
    return s.str();
}

}  // namespace bdre
