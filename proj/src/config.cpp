#include "stt/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stt {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

std::string quote(const std::string& s) { return '"' + s + '"'; }

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw std::invalid_argument("config: key " + key + " expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw std::invalid_argument("config: key " + key + " expects a number, got '" + v + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return static_cast<uint64_t>(x);
  } catch (...) {
    throw std::invalid_argument("config: key " + key + " expects an unsigned integer, got '" + v +
                                "'");
  }
}

}  // namespace

void RunConfig::validate() const {
  corpus.validate();
  if (corpus_size < 10) throw std::invalid_argument("config: corpus.size must be >= 10");
  if (train.warmup_steps < 1 || train.warmup_steps >= train.max_steps)
    throw std::invalid_argument("config: need 1 <= train.warmup_steps < train.max_steps");
  if (train.batch_frames < corpus.frames_per_token * 12)
    throw std::invalid_argument("config: train.batch_frames below the largest utterance");
  if (train.threads < 1) throw std::invalid_argument("config: train.threads must be >= 1");
  if (train.eval_every < 1) throw std::invalid_argument("config: train.eval_every must be >= 1");
  if (task_weights[0] < 0 || task_weights[1] < 0 || task_weights[2] < 0 ||
      task_weights[0] + task_weights[1] + task_weights[2] <= 0)
    throw std::invalid_argument("config: tasks.weights must be non-negative with a positive sum");
  if (src_lang.empty() || tgt_lang.empty())
    throw std::invalid_argument("config: language names must be non-empty");
  lora.validate();
}

namespace {

void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
  // corpus
  if (key == "corpus.alphabet") c.corpus.alphabet = unquote(value);
  else if (key == "corpus.frames_per_token") c.corpus.frames_per_token = static_cast<int>(to_int(key, value));
  else if (key == "corpus.feature_dim") c.corpus.feature_dim = static_cast<int>(to_int(key, value));
  else if (key == "corpus.noise_sigma") c.corpus.noise_sigma = static_cast<float>(to_double(key, value));
  else if (key == "corpus.rule") c.corpus.rule = parse_rule(value, c.corpus.rule.rot_k);
  else if (key == "corpus.rot_k") c.corpus.rule.rot_k = static_cast<int>(to_int(key, value));
  else if (key == "corpus.seed") c.corpus.seed = to_u64(key, value);
  else if (key == "corpus.size") c.corpus_size = static_cast<int>(to_int(key, value));
  else if (key == "corpus.split_seed") c.split_seed = to_u64(key, value);
  // encoder + adaptor
  else if (key == "encoder.layers") c.encoder.layers = static_cast<int>(to_int(key, value));
  else if (key == "encoder.dim") c.encoder.model_dim = static_cast<int>(to_int(key, value));
  else if (key == "encoder.heads") c.encoder.heads = static_cast<int>(to_int(key, value));
  else if (key == "encoder.ffn_dim") c.encoder.ffn_dim = static_cast<int>(to_int(key, value));
  else if (key == "adaptor.k") c.encoder.adaptor_k = static_cast<int>(to_int(key, value));
  // decoder
  else if (key == "decoder.layers") c.decoder.layers = static_cast<int>(to_int(key, value));
  else if (key == "decoder.dim") c.decoder.model_dim = static_cast<int>(to_int(key, value));
  else if (key == "decoder.heads") c.decoder.heads = static_cast<int>(to_int(key, value));
  else if (key == "decoder.ffn_dim") c.decoder.ffn_dim = static_cast<int>(to_int(key, value));
  else if (key == "decoder.max_positions") c.decoder.max_positions = static_cast<int>(to_int(key, value));
  // peft
  else if (key == "peft.policy") c.policy = parse_peft_policy(value);
  else if (key == "lora.rank") c.lora.rank = static_cast<int>(to_int(key, value));
  else if (key == "lora.alpha") c.lora.alpha = to_double(key, value);
  else if (key == "lora.targets") c.lora.targets = parse_lora_targets(value);
  // tasks
  else if (key == "tasks.weights") {
    const auto parts = split_commas(value);
    if (parts.size() != 3)
      throw std::invalid_argument("config: tasks.weights expects three comma-separated values");
    for (size_t i = 0; i < 3; ++i) c.task_weights[i] = to_double(key, parts[i]);
  } else if (key == "tasks.src_lang") c.src_lang = unquote(value);
  else if (key == "tasks.tgt_lang") c.tgt_lang = unquote(value);
  // train
  else if (key == "train.peak_lr") c.train.peak_lr = to_double(key, value);
  else if (key == "train.warmup_steps") c.train.warmup_steps = static_cast<int>(to_int(key, value));
  else if (key == "train.max_steps") c.train.max_steps = static_cast<int>(to_int(key, value));
  else if (key == "train.batch_frames") c.train.batch_frames = static_cast<int>(to_int(key, value));
  else if (key == "train.seed") c.train.seed = to_u64(key, value);
  else if (key == "train.inference_mode") c.train.inference_mode = parse_inference_mode(value);
  else if (key == "train.eval_every") c.train.eval_every = static_cast<int>(to_int(key, value));
  else if (key == "train.early_stop_exact") c.train.early_stop_exact = to_double(key, value);
  else if (key == "train.threads") c.train.threads = static_cast<int>(to_int(key, value));
  // ablation harness
  else if (key == "ablate.policies") c.ablate_policies = split_commas(value);
  else if (key == "ablate.task_sets") c.ablate_task_sets = split_commas(value);
  else if (key == "ablate.seeds") {
    c.ablate_seeds.clear();
    for (const auto& s : split_commas(value)) c.ablate_seeds.push_back(to_u64(key, s));
  } else if (key == "ablate.max_steps") c.ablate_max_steps = static_cast<int>(to_int(key, value));
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not of the form key = value");
    apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  // derived fields
  cfg.encoder.input_dim = cfg.corpus.feature_dim;
  cfg.encoder.decoder_dim = cfg.decoder.model_dim;
  cfg.validate();
  return cfg;
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);  // doubles must survive the echo round trip
  os << "corpus.alphabet = " << quote(c.corpus.alphabet) << '\n';
  os << "corpus.frames_per_token = " << c.corpus.frames_per_token << '\n';
  os << "corpus.feature_dim = " << c.corpus.feature_dim << '\n';
  os << "corpus.noise_sigma = " << c.corpus.noise_sigma << '\n';
  os << "corpus.rule = " << rule_name(c.corpus.rule) << '\n';
  os << "corpus.rot_k = " << c.corpus.rule.rot_k << '\n';
  os << "corpus.seed = " << c.corpus.seed << '\n';
  os << "corpus.size = " << c.corpus_size << '\n';
  os << "corpus.split_seed = " << c.split_seed << '\n';
  os << "encoder.layers = " << c.encoder.layers << '\n';
  os << "encoder.dim = " << c.encoder.model_dim << '\n';
  os << "encoder.heads = " << c.encoder.heads << '\n';
  os << "encoder.ffn_dim = " << c.encoder.ffn_dim << '\n';
  os << "adaptor.k = " << c.encoder.adaptor_k << '\n';
  os << "decoder.layers = " << c.decoder.layers << '\n';
  os << "decoder.dim = " << c.decoder.model_dim << '\n';
  os << "decoder.heads = " << c.decoder.heads << '\n';
  os << "decoder.ffn_dim = " << c.decoder.ffn_dim << '\n';
  os << "decoder.max_positions = " << c.decoder.max_positions << '\n';
  os << "peft.policy = " << peft_policy_name(c.policy) << '\n';
  os << "lora.rank = " << c.lora.rank << '\n';
  os << "lora.alpha = " << c.lora.alpha << '\n';
  os << "lora.targets = " << lora_targets_name(c.lora.targets) << '\n';
  os << "tasks.weights = " << c.task_weights[0] << ',' << c.task_weights[1] << ','
     << c.task_weights[2] << '\n';
  os << "tasks.src_lang = " << quote(c.src_lang) << '\n';
  os << "tasks.tgt_lang = " << quote(c.tgt_lang) << '\n';
  os << "train.peak_lr = " << c.train.peak_lr << '\n';
  os << "train.warmup_steps = " << c.train.warmup_steps << '\n';
  os << "train.max_steps = " << c.train.max_steps << '\n';
  os << "train.batch_frames = " << c.train.batch_frames << '\n';
  os << "train.seed = " << c.train.seed << '\n';
  os << "train.inference_mode = " << inference_mode_name(c.train.inference_mode) << '\n';
  os << "train.eval_every = " << c.train.eval_every << '\n';
  os << "train.early_stop_exact = " << c.train.early_stop_exact << '\n';
  os << "train.threads = " << c.train.threads << '\n';
  {
    os << "ablate.policies = ";
    for (size_t i = 0; i < c.ablate_policies.size(); ++i)
      os << (i ? "," : "") << c.ablate_policies[i];
    os << '\n';
    os << "ablate.task_sets = ";
    for (size_t i = 0; i < c.ablate_task_sets.size(); ++i)
      os << (i ? "," : "") << c.ablate_task_sets[i];
    os << '\n';
    os << "ablate.seeds = ";
    for (size_t i = 0; i < c.ablate_seeds.size(); ++i) os << (i ? "," : "") << c.ablate_seeds[i];
    os << '\n';
    os << "ablate.max_steps = " << c.ablate_max_steps << '\n';
  }
  return os.str();
}

std::array<double, 3> task_set_weights(const std::string& name) {
  if (name == "all") return {1.0, 1.0, 1.0};
  if (name == "-f_chain") return {1.0, 1.0, 0.0};
  if (name == "-f_asr") return {1.0, 0.0, 1.0};
  if (name == "-both") return {1.0, 0.0, 0.0};
  throw std::invalid_argument("unknown task set '" + name + "'");
}

}  // namespace stt
