#pragma once

// Command-line front end: dataset collection, training runs, rollout
// evaluation, and graph export. Every command is a pure function of its flags,
// config file, and input files, so reruns reproduce outputs bit-exactly.
// Exit codes: 0 success, 1 user or config error, 2 internal or numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cswm/eval.hpp"
#include "cswm/train.hpp"

namespace cswm {
namespace detail {

struct Flags {
  std::map<std::string, std::string> kv;

  bool has(const std::string& name) const { return kv.count(name) != 0; }
  const std::string& get(const std::string& name) const { return kv.at(name); }
  std::string get_or(const std::string& name, const std::string& fallback) const {
    auto it = kv.find(name);
    return it == kv.end() ? fallback : it->second;
  }
};

inline Flags parse_flags(const std::vector<std::string>& args,
                         const std::set<std::string>& allowed) {
  Flags f;
  for (size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0)
      throw ConfigError("unexpected argument '" + a + "' (flags look like --name value)");
    std::string name = a.substr(2);
    if (!allowed.count(name)) throw ConfigError("unknown flag '--" + name + "'");
    if (i + 1 >= args.size()) throw ConfigError("flag '--" + name + "' needs a value");
    if (f.kv.count(name)) throw ConfigError("flag '--" + name + "' given twice");
    f.kv[name] = args[++i];
  }
  return f;
}

inline void need_flag(const Flags& f, const std::string& name) {
  if (!f.has(name)) throw ConfigError("missing required flag '--" + name + "'");
}

inline int64_t flag_int(const Flags& f, const std::string& name) {
  const std::string& s = f.get(name);
  try {
    size_t pos = 0;
    int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("flag '--" + name + "' expects an integer, got '" + s + "'");
  }
}

inline uint64_t flag_u64(const Flags& f, const std::string& name) {
  const std::string& s = f.get(name);
  try {
    size_t pos = 0;
    uint64_t v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("flag '--" + name + "' expects a non-negative integer, got '" + s + "'");
  }
}

inline float flag_float(const Flags& f, const std::string& name) {
  const std::string& s = f.get(name);
  try {
    size_t pos = 0;
    float v = std::stof(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("flag '--" + name + "' expects a number, got '" + s + "'");
  }
}

inline uint64_t buffer_hash(const ExperienceBuffer& b) {
  uint64_t h = fnv1a64(b.frames.data(), b.frames.size() * sizeof(float));
  if (!b.actions.empty()) h = fnv1a64(b.actions.data(), b.actions.size(), h);
  return h;
}

inline std::string hex64(uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline Json load_json_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw ConfigError(msg_cat(what, " '", path, "' cannot be opened"));
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError(msg_cat(what, " '", path, "': ", e.what()));
  }
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw FormatError("cannot write '" + path + "'");
  out << content;
  if (!out.good()) throw FormatError("failed writing '" + path + "'");
}

inline std::vector<int64_t> parse_step_list(const std::string& s) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t pos = 0;
      int64_t v = std::stoll(item, &pos);
      if (pos != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--steps expects comma-separated positive integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("--steps expects at least one step count");
  return out;
}

}  // namespace detail

inline const char* cli_usage() {
  return
      "usage: cswm <command> --flag value ...\n"
      "\n"
      "commands:\n"
      "  collect        sample a random-policy dataset from an environment\n"
      "  train          train a world model on a collected dataset\n"
      "  eval           rank latent rollouts against reference encodings\n"
      "  export-graph   write the latent transition graph (DOT + JSON)\n"
      "\n"
      "collect:       --episodes N --steps N --seed S --out FILE\n"
      "               [--env shapes2d|physics3body] [--variant standard|noop|random]\n"
      "               [--split train|eval]\n"
      "train:         [--config FILE.json] --data FILE --out DIR\n"
      "               [--epochs N] [--batch-size N] [--lr X] [--seed S]\n"
      "               the seed is mandatory: --seed or train.seed in the config\n"
      "eval:          --checkpoint FILE --data FILE [--steps 1,5,10] [--out FILE.json]\n"
      "export-graph:  --checkpoint FILE --data FILE --out PREFIX [--slot K|all]\n"
      "\n"
      "Config files are JSON with sections env/model/train plus data and out;\n"
      "command-line flags override config values, and the effective config is\n"
      "echoed into the run directory. CSWM_THREADS caps BLAS parallelism\n"
      "(default 1, fully deterministic).\n";
}

inline int cmd_collect(const std::vector<std::string>& args) {
  detail::Flags f = detail::parse_flags(
      args, {"env", "variant", "episodes", "steps", "seed", "out", "split"});
  for (const char* name : {"episodes", "steps", "seed", "out"}) detail::need_flag(f, name);

  EnvConfig env;
  env.kind = env_kind_from_string(f.get_or("env", "shapes2d"));
  std::string variant = f.get_or("variant", "standard");
  if (variant == "noop")
    env.noop_action = true;
  else if (variant == "random")
    env.random_object = true;
  else if (variant != "standard")
    throw ConfigError("unknown variant '" + variant + "' (expected standard, noop, or random)");

  int64_t episodes = detail::flag_int(f, "episodes");
  int64_t steps = detail::flag_int(f, "steps");
  if (episodes < 1 || steps < 1) throw ConfigError("episodes and steps must be positive");
  uint64_t seed = detail::flag_u64(f, "seed");
  env.seed = seed;
  env.validate();

  std::string split = f.get_or("split", "train");
  if (split != "train" && split != "eval")
    throw ConfigError("--split must be 'train' or 'eval', got '" + split + "'");

  ExperienceBuffer b = collect(env, episodes, steps, seed, split);
  save_dataset(b, f.get("out"));
  std::cout << "dataset " << f.get("out") << ": episodes=" << b.episodes
            << " steps=" << b.steps << " transitions=" << b.transition_count()
            << " hash=" << detail::hex64(detail::buffer_hash(b)) << "\n";
  return 0;
}

inline int cmd_train(const std::vector<std::string>& args) {
  detail::Flags f = detail::parse_flags(
      args, {"config", "data", "out", "epochs", "batch-size", "lr", "seed"});

  RunConfig rc;
  bool cfg_sets_model = false, seed_given = false;
  if (f.has("config")) {
    Json j = detail::load_json_file(f.get("config"), "config file");
    try {
      rc = RunConfig::from_json(j);
    } catch (const Json::exception& e) {
      throw ConfigError(detail::msg_cat("config file '", f.get("config"), "': ", e.what()));
    }
    cfg_sets_model = j.contains("model") || j.contains("env");
    seed_given = j.contains("train") && j.at("train").contains("seed");
  }
  if (f.has("data")) rc.data = f.get("data");
  if (f.has("out")) rc.out = f.get("out");
  if (f.has("epochs")) rc.train.epochs = detail::flag_int(f, "epochs");
  if (f.has("batch-size")) rc.train.batch_size = detail::flag_int(f, "batch-size");
  if (f.has("lr")) rc.train.lr = detail::flag_float(f, "lr");
  if (f.has("seed")) {
    rc.train.seed = detail::flag_u64(f, "seed");
    seed_given = true;
  }
  if (rc.data.empty())
    throw ConfigError("training data required: pass --data or set 'data' in the config");
  if (rc.out.empty())
    throw ConfigError("output directory required: pass --out or set 'out' in the config");
  if (!seed_given)
    throw ConfigError("the seed is mandatory: pass --seed or set train.seed in the config");
  rc.train.validate();

  ExperienceBuffer b = load_dataset(rc.data);
  if (!cfg_sets_model) {
    rc.model.env = b.env.kind;
    rc.model.apply_env_defaults();
  }
  if (rc.model.env != b.env.kind)
    throw ConfigError(detail::msg_cat("model env '", to_string(rc.model.env),
                                      "' does not match dataset env '",
                                      to_string(b.env.kind), "'"));
  if (b.split != "train")
    throw ConfigError("dataset '" + rc.data + "' is labeled split '" + b.split +
                      "'; training requires a 'train' split");
  if (rc.train.batch_size > b.transition_count())
    throw ConfigError(detail::msg_cat("batch_size ", rc.train.batch_size,
                                      " exceeds the dataset's ", b.transition_count(),
                                      " transitions"));
  rc.env = b.env;

  std::error_code ec;
  std::filesystem::create_directories(rc.out, ec);
  if (ec) throw ConfigError("cannot create output directory '" + rc.out + "': " + ec.message());
  detail::write_text_file(rc.out + "/effective-config.json", rc.to_json().dump(1) + "\n");

  WorldModel model = WorldModel::create(rc.model, rc.train.seed);
  std::string ckpt = rc.out + "/checkpoint.cswm";
  TrainResult tr = train_model(model, b, rc.train, ckpt,
                               [&](int64_t epoch, double loss) {
                                 std::cout << "epoch " << (epoch + 1) << "/"
                                           << rc.train.epochs << " loss " << loss
                                           << std::endl;
                               });

  std::ostringstream csv;
  csv << "epoch,loss\n" << std::setprecision(17);
  for (size_t i = 0; i < tr.loss_curve.size(); ++i)
    csv << i << "," << tr.loss_curve[i] << "\n";
  detail::write_text_file(rc.out + "/loss.csv", csv.str());

  std::cout << "run " << rc.out << ": " << tr.loss_curve.size() << " epochs, "
            << tr.batches_per_epoch << " batches/epoch, final loss "
            << tr.loss_curve.back() << "\ncheckpoint " << ckpt << "\n";
  return 0;
}

inline int cmd_eval(const std::vector<std::string>& args) {
  detail::Flags f = detail::parse_flags(args, {"checkpoint", "data", "steps", "out"});
  detail::need_flag(f, "checkpoint");
  detail::need_flag(f, "data");

  WorldModel model = WorldModel::load(f.get("checkpoint"));
  ExperienceBuffer b = load_dataset(f.get("data"));
  if (model.cfg.env != b.env.kind)
    throw ConfigError(detail::msg_cat("checkpoint env '", to_string(model.cfg.env),
                                      "' does not match dataset env '",
                                      to_string(b.env.kind), "'"));
  std::vector<int64_t> steps = detail::parse_step_list(f.get_or("steps", "1,5,10"));
  for (int64_t n : steps)
    if (n > b.steps)
      throw ConfigError(detail::msg_cat(n, "-step rollouts need episodes with at least ",
                                        n, " transitions; dataset has ", b.steps));

  std::vector<RankingResult> results = evaluate(model, b, steps, {1});

  Json j;
  j["checkpoint"] = f.get("checkpoint");
  j["data"] = f.get("data");
  j["steps"] = Json::object();
  std::ios old_state(nullptr);
  old_state.copyfmt(std::cout);
  std::cout << std::fixed << std::setprecision(6);
  for (const RankingResult& r : results) {
    std::cout << "steps=" << r.steps << " hits_at_1=" << r.hits.at(1)
              << " mrr=" << r.mrr << " queries=" << r.ranks.size() << "\n";
    j["steps"][std::to_string(r.steps)] = {{"hits_at_1", r.hits.at(1)},
                                           {"mrr", r.mrr},
                                           {"queries", r.ranks.size()}};
  }
  std::cout.copyfmt(old_state);

  std::string out = f.has("out")
                        ? f.get("out")
                        : (std::filesystem::path(f.get("checkpoint")).parent_path() /
                           "metrics.json")
                              .string();
  detail::write_text_file(out, j.dump(1) + "\n");
  std::cout << "metrics " << out << "\n";
  return 0;
}

inline int cmd_export_graph(const std::vector<std::string>& args) {
  detail::Flags f = detail::parse_flags(args, {"checkpoint", "data", "slot", "out"});
  for (const char* name : {"checkpoint", "data", "out"}) detail::need_flag(f, name);

  WorldModel model = WorldModel::load(f.get("checkpoint"));
  ExperienceBuffer b = load_dataset(f.get("data"));
  if (model.cfg.env != b.env.kind)
    throw ConfigError(detail::msg_cat("checkpoint env '", to_string(model.cfg.env),
                                      "' does not match dataset env '",
                                      to_string(b.env.kind), "'"));
  int64_t slot = -1;
  if (std::string s = f.get_or("slot", "all"); s != "all") {
    slot = detail::flag_int(f, "slot");
    if (slot < 0 || slot >= model.cfg.slot_count())
      throw ConfigError(detail::msg_cat("slot ", slot, " out of range: the model has ",
                                        model.cfg.slot_count(), " slots (or pass 'all')"));
  }

  TransitionGraph g = export_graph(model, b, slot, f.get("out"));
  std::cout << "graph " << f.get("out") << ".{json,dot}: nodes=" << g.nodes.size()
            << " edges=" << g.edges.size() << "\n";
  return 0;
}

inline int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) {
    std::cerr << cli_usage();
    return 1;
  }
  std::string cmd = args.front();
  std::vector<std::string> rest(args.begin() + 1, args.end());
  try {
    if (cmd == "help" || cmd == "--help" || cmd == "-h") {
      std::cout << cli_usage();
      return 0;
    }
    if (cmd == "collect") return cmd_collect(rest);
    if (cmd == "train") return cmd_train(rest);
    if (cmd == "eval") return cmd_eval(rest);
    if (cmd == "export-graph") return cmd_export_graph(rest);
    throw ConfigError("unknown command '" + cmd + "' (run 'cswm help')");
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace cswm
