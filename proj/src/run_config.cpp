#include "crm/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace crm {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest %g form that parses back to the same double.
std::string fmt_real(double v) {
  char buf[32];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

long long parse_int(std::string_view v, const std::string& key) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key, key + ": expected an integer, got '" + std::string(v) + "'");
  return out;
}

double parse_real(std::string_view v, const std::string& key) {
  // from_chars for double is unavailable on some toolchains
  std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError(key, key + ": expected a number, got '" + s + "'");
  }
  return out;
}

bool parse_bool(std::string_view v, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key, key + ": expected true or false, got '" + std::string(v) + "'");
}

std::string unquote(std::string_view v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  return std::string(v);
}

std::vector<int> parse_int_list(std::string_view v, const std::string& key) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    const auto comma = v.find(',', pos);
    const auto item = trim(v.substr(pos, comma == std::string_view::npos ? v.npos : comma - pos));
    out.push_back(static_cast<int>(parse_int(item, key)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (const auto& x : xs) {
    if (!out.empty()) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt_real(x);
    } else {
      out += std::to_string(x);
    }
  }
  return out;
}

struct Field {
  std::string section;
  std::string name;
  std::function<void(RunConfig&, std::string_view, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};


const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto integer = [&](std::string sec, std::string key, std::function<void(RunConfig&, int)> set,
                       std::function<int(const RunConfig&)> get) {
      f.push_back({sec, key,
                   [set](RunConfig& c, std::string_view v, const std::string& k) {
                     set(c, static_cast<int>(parse_int(v, k)));
                   },
                   [get](const RunConfig& c) { return std::to_string(get(c)); }});
    };
    auto real = [&](std::string sec, std::string key, std::function<void(RunConfig&, double)> set,
                    std::function<double(const RunConfig&)> get) {
      f.push_back({sec, key,
                   [set](RunConfig& c, std::string_view v, const std::string& k) {
                     set(c, parse_real(v, k));
                   },
                   [get](const RunConfig& c) { return fmt_real(get(c)); }});
    };

    // [data]: corpus shape, shared by the generator, the loader and the model.
    integer("data", "num_videos", [](RunConfig& c, int v) { c.synth.num_videos = v; },
            [](const RunConfig& c) { return c.synth.num_videos; });
    integer("data", "num_clips",
            [](RunConfig& c, int v) {
              c.synth.num_clips = v;
              c.corpus.num_clips = v;
              c.train.model.num_clips = v;
            },
            [](const RunConfig& c) { return c.corpus.num_clips; });
    integer("data", "video_dim",
            [](RunConfig& c, int v) {
              c.synth.video_dim = v;
              c.train.model.video_dim = v;
            },
            [](const RunConfig& c) { return c.train.model.video_dim; });
    integer("data", "text_dim",
            [](RunConfig& c, int v) {
              c.synth.text_dim = v;
              c.train.model.text_dim = v;
            },
            [](const RunConfig& c) { return c.train.model.text_dim; });
    integer("data", "pool_span", [](RunConfig& c, int v) { c.corpus.pool_span = v; },
            [](const RunConfig& c) { return c.corpus.pool_span; });
    integer("data", "max_words",
            [](RunConfig& c, int v) {
              c.corpus.max_words = v;
              c.synth.words_per_sentence = std::min(c.synth.words_per_sentence, v);
            },
            [](const RunConfig& c) { return c.corpus.max_words; });
    integer("data", "min_events", [](RunConfig& c, int v) { c.synth.min_events = v; },
            [](const RunConfig& c) { return c.synth.min_events; });
    integer("data", "max_events", [](RunConfig& c, int v) { c.synth.max_events = v; },
            [](const RunConfig& c) { return c.synth.max_events; });
    integer("data", "num_event_types", [](RunConfig& c, int v) { c.synth.num_event_types = v; },
            [](const RunConfig& c) { return c.synth.num_event_types; });
    real("data", "ambiguity_rate", [](RunConfig& c, double v) { c.synth.ambiguity_rate = v; },
         [](const RunConfig& c) { return c.synth.ambiguity_rate; });
    real("data", "noise_std", [](RunConfig& c, double v) { c.synth.noise_std = v; },
         [](const RunConfig& c) { return c.synth.noise_std; });
    integer("data", "seed", [](RunConfig& c, int v) { c.synth.seed = static_cast<std::uint64_t>(v); },
            [](const RunConfig& c) { return static_cast<int>(c.synth.seed); });
    integer("data", "words_per_sentence",
            [](RunConfig& c, int v) { c.synth.words_per_sentence = v; },
            [](const RunConfig& c) { return c.synth.words_per_sentence; });
    integer("data", "words_per_type", [](RunConfig& c, int v) { c.synth.words_per_type = v; },
            [](const RunConfig& c) { return c.synth.words_per_type; });
    integer("data", "confuser_pool", [](RunConfig& c, int v) { c.synth.confuser_pool = v; },
            [](const RunConfig& c) { return c.synth.confuser_pool; });
    integer("data", "min_event_length", [](RunConfig& c, int v) { c.synth.min_event_length = v; },
            [](const RunConfig& c) { return c.synth.min_event_length; });
    integer("data", "max_event_length", [](RunConfig& c, int v) { c.synth.max_event_length = v; },
            [](const RunConfig& c) { return c.synth.max_event_length; });
    real("data", "test_fraction", [](RunConfig& c, double v) { c.synth.test_fraction = v; },
         [](const RunConfig& c) { return c.synth.test_fraction; });
    real("data", "word_noise_std", [](RunConfig& c, double v) { c.synth.word_noise_std = v; },
         [](const RunConfig& c) { return c.synth.word_noise_std; });

    // [model]
    integer("model", "hidden_dim", [](RunConfig& c, int v) { c.train.model.hidden_dim = v; },
            [](const RunConfig& c) { return c.train.model.hidden_dim; });
    integer("model", "v2v_depth", [](RunConfig& c, int v) { c.train.model.v2v_depth = v; },
            [](const RunConfig& c) { return c.train.model.v2v_depth; });
    integer("model", "q2q_depth", [](RunConfig& c, int v) { c.train.model.q2q_depth = v; },
            [](const RunConfig& c) { return c.train.model.q2q_depth; });
    integer("model", "q2v_depth", [](RunConfig& c, int v) { c.train.model.q2v_depth = v; },
            [](const RunConfig& c) { return c.train.model.q2v_depth; });
    integer("model", "v2q_depth", [](RunConfig& c, int v) { c.train.model.v2q_depth = v; },
            [](const RunConfig& c) { return c.train.model.v2q_depth; });
    f.push_back({"model", "window_sizes",
                 [](RunConfig& c, std::string_view v, const std::string& k) {
                   c.train.model.grid.window_sizes = parse_int_list(v, k);
                 },
                 [](const RunConfig& c) { return join(c.train.model.grid.window_sizes); }});
    integer("model", "stride", [](RunConfig& c, int v) { c.train.model.grid.stride = v; },
            [](const RunConfig& c) { return c.train.model.grid.stride; });

    // [train]
    integer("train", "batch_videos", [](RunConfig& c, int v) { c.train.batch_videos = v; },
            [](const RunConfig& c) { return c.train.batch_videos; });
    integer("train", "epochs", [](RunConfig& c, int v) { c.train.epochs = v; },
            [](const RunConfig& c) { return c.train.epochs; });
    real("train", "learning_rate", [](RunConfig& c, double v) { c.train.learning_rate = v; },
         [](const RunConfig& c) { return c.train.learning_rate; });
    real("train", "beta1", [](RunConfig& c, double v) { c.train.beta1 = v; },
         [](const RunConfig& c) { return c.train.beta1; });
    real("train", "beta2", [](RunConfig& c, double v) { c.train.beta2 = v; },
         [](const RunConfig& c) { return c.train.beta2; });
    real("train", "adam_epsilon", [](RunConfig& c, double v) { c.train.adam_epsilon = v; },
         [](const RunConfig& c) { return c.train.adam_epsilon; });
    real("train", "grad_clip", [](RunConfig& c, double v) { c.train.grad_clip = v; },
         [](const RunConfig& c) { return c.train.grad_clip; });
    real("train", "tau", [](RunConfig& c, double v) { c.train.tau = v; },
         [](const RunConfig& c) { return c.train.tau; });
    integer("train", "max_concat_words", [](RunConfig& c, int v) { c.train.max_concat_words = v; },
            [](const RunConfig& c) { return c.train.max_concat_words; });
    integer("train", "seed", [](RunConfig& c, int v) { c.train.seed = static_cast<std::uint64_t>(v); },
            [](const RunConfig& c) { return static_cast<int>(c.train.seed); });
    f.push_back({"train", "losses",
                 [](RunConfig& c, std::string_view v, const std::string& k) {
                   try {
                     c.train.losses = parse_loss_switches(unquote(v));
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(k, k + ": " + e.what());
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.train.losses); }});

    // [eval]
    f.push_back({"eval", "thresholds",
                 [](RunConfig& c, std::string_view v, const std::string& k) {
                   try {
                     c.eval.thresholds = parse_number_list(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(k, k + ": " + e.what());
                   }
                 },
                 [](const RunConfig& c) { return join(c.eval.thresholds); }});
    f.push_back({"eval", "split",
                 [](RunConfig& c, std::string_view v, const std::string& k) {
                   try {
                     c.eval.split = parse_split(unquote(v));
                   } catch (const std::exception& e) {
                     throw ConfigError(k, k + ": " + e.what());
                   }
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.eval.split)); }});
    real("eval", "tau", [](RunConfig& c, double v) { c.eval.tau = v; },
         [](const RunConfig& c) { return c.eval.tau; });
    f.push_back({"eval", "with_pairs",
                 [](RunConfig& c, std::string_view v, const std::string& k) {
                   c.eval.with_pairs = parse_bool(v, k);
                 },
                 [](const RunConfig& c) { return std::string(c.eval.with_pairs ? "true" : "false"); }});
    return f;
  }();
  return table;
}

}  // namespace

RunConfig::RunConfig() {
  corpus.num_clips = synth.num_clips;
  corpus.pool_span = 1;
  corpus.max_words = synth.words_per_sentence;
  train.model.video_dim = synth.video_dim;
  train.model.text_dim = synth.text_dim;
  train.model.hidden_dim = 16;
  train.model.num_clips = synth.num_clips;
  train.model.grid = GridConfig{{4, 6, 8, 10, 12, 16, 20}, 2};
  train.batch_videos = 16;
  train.learning_rate = 3e-3;
  train.epochs = 50;
}

LossSwitches parse_loss_switches(std::string_view text) {
  LossSwitches out{false, false, false};
  std::size_t pos = 0;
  text = trim(text);
  if (text == "none") return out;
  if (text.empty()) throw std::invalid_argument("empty loss list (use none to disable all)");
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = trim(text.substr(pos, comma == std::string_view::npos ? text.npos : comma - pos));
    if (item == "bce") {
      out.bce = true;
    } else if (item == "tmp") {
      out.tmp = true;
    } else if (item == "smt") {
      out.smt = true;
    } else {
      throw std::invalid_argument("unknown loss '" + std::string(item) + "' (expected bce, tmp, smt)");
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string to_string(const LossSwitches& s) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(s.bce, "bce");
  add(s.tmp, "tmp");
  add(s.smt, "smt");
  return out.empty() ? "none" : out;
}

std::vector<double> parse_number_list(std::string_view text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = trim(text.substr(pos, comma == std::string_view::npos ? text.npos : comma - pos));
    std::string s(item);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
      throw std::invalid_argument("bad number '" + s + "'");
    }
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig config;
  static const std::set<std::string> sections{"data", "model", "train", "eval"};
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("", "line " + std::to_string(line_no) + ": malformed section header");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!sections.count(section)) throw ConfigError(section, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(line), "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string name(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    const std::string key = section.empty() ? name : section + "." + name;
    if (section.empty()) throw ConfigError(key, "key '" + key + "' outside any section");
    bool found = false;
    for (const auto& f : fields()) {
      if (f.section == section && f.name == name) {
        f.set(config, value, key);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError(key, "unknown key '" + key + "'");
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_text(const RunConfig& config) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.name + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace crm
