#include "qdarbor/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "qdarbor/io.hpp"

namespace qdarbor {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::vector<double> parse_list(const std::string& value, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("config: invalid number '" + item + "' in " + key);
        }
    }
    if (out.empty()) throw ConfigError("config: empty list for " + key);
    return out;
}

class Reader {
public:
    explicit Reader(const ConfigMap& config) : config_(config) {}

    bool has(const std::string& key) const { return config_.count(key) > 0; }

    std::string require(const std::string& key) const {
        auto it = config_.find(key);
        if (it == config_.end())
            throw ConfigError("config: missing required field `" + key + "`");
        return it->second;
    }

    std::string str(const std::string& key, const std::string& fallback) const {
        auto it = config_.find(key);
        return it == config_.end() ? fallback : it->second;
    }

    double num(const std::string& key, double fallback) const {
        auto it = config_.find(key);
        if (it == config_.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw ConfigError("config: invalid number for " + key + ": " + it->second);
        }
    }

    long integer(const std::string& key, long fallback) const {
        const double v = num(key, static_cast<double>(fallback));
        return static_cast<long>(v);
    }

    bool boolean(const std::string& key, bool fallback) const {
        auto it = config_.find(key);
        if (it == config_.end()) return fallback;
        const std::string v = it->second;
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config: invalid boolean for " + key + ": " + v);
    }

private:
    const ConfigMap& config_;
};

}  // namespace

ConfigMap preset_config(const std::string& name) {
    ConfigMap c;
    if (name == "desk") {
        c["env.name"] = "pointhopper";
        c["env.k"] = "2";
        c["env.episode_length"] = "200";
        c["env.num_envs"] = "64";
        c["archive.resolution"] = "25,25";
        c["archive.lower"] = "0,0";
        c["archive.upper"] = "1,1";
        c["archive.alpha"] = "0.1";
        c["archive.threshold_min"] = "-100";
        c["archive.score_offset"] = "-100";
        c["run.iterations"] = "50";
        c["run.n1"] = "10";
        c["run.n2"] = "10";
        c["nes.lambda"] = "32";
        c["run.episodes_per_eval"] = "3";
        c["nes.sigma_g"] = "1.0";
    } else if (name == "paper") {
        c["env.name"] = "pointhopper";
        c["env.k"] = "2";
        c["env.episode_length"] = "200";
        c["env.num_envs"] = "1024";
        c["archive.resolution"] = "50,50";
        c["archive.lower"] = "0,0";
        c["archive.upper"] = "1,1";
        c["archive.alpha"] = "0.1";
        c["archive.threshold_min"] = "-100";
        c["archive.score_offset"] = "-100";
        c["run.iterations"] = "1000";
        c["run.n1"] = "10";
        c["run.n2"] = "10";
        c["nes.lambda"] = "300";
        c["run.episodes_per_eval"] = "10";
        c["nes.sigma_g"] = "1.0";
    } else if (name == "analytic") {
        c["env.name"] = "analytic";
        c["analytic.dim"] = "20";
        c["analytic.measures"] = "2";
        c["archive.resolution"] = "50,50";
        c["archive.lower"] = "0,0";
        c["archive.upper"] = "1,1";
        c["archive.alpha"] = "0.1";
        c["archive.threshold_min"] = "-300";
        c["archive.score_offset"] = "-300";
        c["run.iterations"] = "300";
        c["nes.lambda"] = "32";
        c["nes.sigma_g"] = "0.2";
        c["run.walk_mode"] = "weighted_recombination";
    } else {
        throw ConfigError("config: unknown preset `" + name + "`");
    }
    return c;
}

ConfigMap parse_config_text(const std::string& text) {
    ConfigMap out;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(line_no) +
                              " is not key=value: " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config: empty key on line " + std::to_string(line_no));
        out[key] = value;
    }
    return out;
}

ConfigMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void apply_override(ConfigMap& config, const std::string& key_equals_value) {
    const auto eq = key_equals_value.find('=');
    if (eq == std::string::npos)
        throw ConfigError("config: override must be key=value, got `" + key_equals_value + "`");
    config[trim(key_equals_value.substr(0, eq))] = trim(key_equals_value.substr(eq + 1));
}

RunConfig to_run_config(const ConfigMap& config) {
    Reader r(config);
    RunConfig cfg;

    const std::string env_name = r.str("env.name", "pointhopper");
    if (env_name == "analytic") {
        cfg.env_kind = EnvKind::kAnalytic;
        cfg.analytic_dim = static_cast<int>(r.integer("analytic.dim", 20));
        cfg.analytic_measures = static_cast<int>(r.integer("analytic.measures", 2));
    } else if (env_name == "pointhopper" || env_name == "pointhopper2") {
        cfg.env_kind = EnvKind::kPointHopper;
        cfg.env.num_legs = env_name == "pointhopper2"
                               ? 2
                               : static_cast<int>(r.integer("env.k", 2));
        cfg.env.episode_length = static_cast<int>(r.integer("env.episode_length", 200));
        cfg.env.dt = r.num("env.dt", 0.05);
        cfg.env.control_cost = r.num("env.control_cost", 0.05);
        cfg.ppo.num_envs = static_cast<int>(r.integer("env.num_envs", 64));
    } else {
        throw ConfigError("config: unknown env.name `" + env_name + "`");
    }

    const std::vector<double> resolution = parse_list(r.require("archive.resolution"), "archive.resolution");
    const std::vector<double> lower = parse_list(r.require("archive.lower"), "archive.lower");
    const std::vector<double> upper = parse_list(r.require("archive.upper"), "archive.upper");
    if (lower.size() != resolution.size() || upper.size() != resolution.size())
        throw ConfigError("config: archive.lower/upper must match archive.resolution length");
    for (double v : resolution) cfg.archive.resolution.push_back(static_cast<int>(v));
    cfg.archive.lower_bounds = Eigen::Map<const Eigen::VectorXd>(lower.data(), lower.size());
    cfg.archive.upper_bounds = Eigen::Map<const Eigen::VectorXd>(upper.data(), upper.size());
    cfg.archive.alpha = r.num("archive.alpha", 0.1);
    cfg.archive.threshold_min = r.num("archive.threshold_min", 0.0);
    cfg.archive.score_offset = r.num("archive.score_offset", 0.0);

    cfg.iterations = static_cast<int>(r.integer("run.iterations", 50));
    cfg.n1 = static_cast<int>(r.integer("run.n1", 10));
    cfg.n2 = static_cast<int>(r.integer("run.n2", 10));
    cfg.lambda = static_cast<int>(r.integer("nes.lambda", 32));
    cfg.episodes_per_eval = static_cast<int>(r.integer("run.episodes_per_eval", 3));
    cfg.sigma_g = r.num("nes.sigma_g", 1.0);
    cfg.seed = static_cast<std::uint64_t>(r.integer("run.seed", 0));
    cfg.deterministic = r.boolean("run.deterministic", true);
    cfg.insert_walked = r.boolean("run.insert_walked", true);
    cfg.checkpoint_interval = static_cast<int>(r.integer("run.checkpoint_interval", 0));

    const std::string walk_mode = r.str("run.walk_mode", "vppo_walk");
    if (walk_mode == "vppo_walk") cfg.walk_mode = WalkMode::kVppoWalk;
    else if (walk_mode == "weighted_recombination") cfg.walk_mode = WalkMode::kWeightedRecombination;
    else throw ConfigError("config: unknown run.walk_mode `" + walk_mode + "`");

    const std::string ranking = r.str("nes.ranking", "flat");
    if (ranking == "flat") cfg.ranking = RankingMode::kFlat;
    else if (ranking == "two_stage") cfg.ranking = RankingMode::kTwoStage;
    else throw ConfigError("config: unknown nes.ranking `" + ranking + "`");
    cfg.abs_obj_coeff = r.boolean("nes.abs_obj_coeff", true);

    cfg.ppo.lr = r.num("ppo.lr", 3e-4);
    cfg.ppo.clip = r.num("ppo.clip", 0.2);
    cfg.ppo.epochs = static_cast<int>(r.integer("ppo.epochs", 4));
    cfg.ppo.minibatches = static_cast<int>(r.integer("ppo.minibatches", 8));
    cfg.ppo.gamma = r.num("ppo.gamma", 0.99);
    cfg.ppo.gae_lambda = r.num("ppo.gae_lambda", 0.95);
    cfg.ppo.rollout_length = static_cast<int>(r.integer("ppo.rollout_length", 128));
    cfg.ppo.entropy_coef = r.num("ppo.entropy_coef", 0.0);
    cfg.ppo.value_coef = r.num("ppo.value_coef", 0.5);
    cfg.ppo.max_grad_norm = r.num("ppo.max_grad_norm", 0.5);
    cfg.ppo.normalize_obs = r.boolean("ppo.normalize_obs", true);
    cfg.ppo.normalize_rewards = r.boolean("ppo.normalize_rewards", true);
    const std::string std_mode = r.str("ppo.std_mode", "fixed");
    if (std_mode == "fixed") cfg.ppo.std_mode = StdMode::kFixed;
    else if (std_mode == "adaptive") cfg.ppo.std_mode = StdMode::kAdaptive;
    else throw ConfigError("config: unknown ppo.std_mode `" + std_mode + "`");

    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

std::string serialize_config(const ConfigMap& config) {
    std::ostringstream out;
    for (const auto& [key, value] : config) out << key << " = " << value << "\n";
    return out.str();
}

ConfigMap effective_config(const RunConfig& cfg) {
    ConfigMap c;
    auto list = [](const auto& values) {
        std::ostringstream ss;
        for (long i = 0; i < static_cast<long>(values.size()); ++i) {
            if (i) ss << ",";
            ss << io::format_double(static_cast<double>(values[i]));
        }
        return ss.str();
    };
    if (cfg.env_kind == EnvKind::kAnalytic) {
        c["env.name"] = "analytic";
        c["analytic.dim"] = std::to_string(cfg.analytic_dim);
        c["analytic.measures"] = std::to_string(cfg.analytic_measures);
    } else {
        c["env.name"] = "pointhopper";
        c["env.k"] = std::to_string(cfg.env.num_legs);
        c["env.episode_length"] = std::to_string(cfg.env.episode_length);
        c["env.dt"] = io::format_double(cfg.env.dt);
        c["env.control_cost"] = io::format_double(cfg.env.control_cost);
        c["env.num_envs"] = std::to_string(cfg.ppo.num_envs);
    }
    c["archive.resolution"] = list(cfg.archive.resolution);
    c["archive.lower"] = list(cfg.archive.lower_bounds);
    c["archive.upper"] = list(cfg.archive.upper_bounds);
    c["archive.alpha"] = io::format_double(cfg.archive.alpha);
    c["archive.threshold_min"] = io::format_double(cfg.archive.threshold_min);
    c["archive.score_offset"] = io::format_double(cfg.archive.score_offset);
    c["run.iterations"] = std::to_string(cfg.iterations);
    c["run.n1"] = std::to_string(cfg.n1);
    c["run.n2"] = std::to_string(cfg.n2);
    c["nes.lambda"] = std::to_string(cfg.lambda);
    c["run.episodes_per_eval"] = std::to_string(cfg.episodes_per_eval);
    c["nes.sigma_g"] = io::format_double(cfg.sigma_g);
    c["run.seed"] = std::to_string(cfg.seed);
    c["run.deterministic"] = cfg.deterministic ? "true" : "false";
    c["run.insert_walked"] = cfg.insert_walked ? "true" : "false";
    c["run.checkpoint_interval"] = std::to_string(cfg.checkpoint_interval);
    c["run.walk_mode"] = cfg.walk_mode == WalkMode::kVppoWalk ? "vppo_walk"
                                                              : "weighted_recombination";
    c["nes.ranking"] = cfg.ranking == RankingMode::kFlat ? "flat" : "two_stage";
    c["nes.abs_obj_coeff"] = cfg.abs_obj_coeff ? "true" : "false";
    c["ppo.lr"] = io::format_double(cfg.ppo.lr);
    c["ppo.clip"] = io::format_double(cfg.ppo.clip);
    c["ppo.epochs"] = std::to_string(cfg.ppo.epochs);
    c["ppo.minibatches"] = std::to_string(cfg.ppo.minibatches);
    c["ppo.gamma"] = io::format_double(cfg.ppo.gamma);
    c["ppo.gae_lambda"] = io::format_double(cfg.ppo.gae_lambda);
    c["ppo.rollout_length"] = std::to_string(cfg.ppo.rollout_length);
    c["ppo.entropy_coef"] = io::format_double(cfg.ppo.entropy_coef);
    c["ppo.value_coef"] = io::format_double(cfg.ppo.value_coef);
    c["ppo.max_grad_norm"] = io::format_double(cfg.ppo.max_grad_norm);
    c["ppo.normalize_obs"] = cfg.ppo.normalize_obs ? "true" : "false";
    c["ppo.normalize_rewards"] = cfg.ppo.normalize_rewards ? "true" : "false";
    c["ppo.std_mode"] = cfg.ppo.std_mode == StdMode::kFixed ? "fixed" : "adaptive";
    return c;
}

}  // namespace qdarbor
