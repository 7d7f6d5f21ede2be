#include "sagvit/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace sagvit {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return std::string(line.substr(0, i));
  }
  return std::string(line);
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

bool parse_number(const std::string& s, double& out, bool& integer) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (...) {
    return false;
  }
  if (used != s.size()) return false;
  integer = s.find_first_of(".eE") == std::string::npos || s.find("inf") != std::string::npos;
  if (s.find_first_of(".eE") == std::string::npos) integer = true;
  return true;
}

ConfigValue parse_value(const std::string& raw, std::size_t line) {
  ConfigValue v;
  v.line = line;
  if (raw.empty()) fail(line, "missing value");
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"') fail(line, "unterminated string " + raw);
    v.kind = ConfigValue::Kind::string;
    v.text = raw.substr(1, raw.size() - 2);
    return v;
  }
  if (raw == "true" || raw == "false") {
    v.kind = ConfigValue::Kind::boolean;
    v.boolean = raw == "true";
    return v;
  }
  if (raw.front() == '[') {
    if (raw.back() != ']') fail(line, "unterminated array " + raw);
    v.kind = ConfigValue::Kind::array;
    std::stringstream items(raw.substr(1, raw.size() - 2));
    std::string item;
    while (std::getline(items, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      double x = 0.0;
      bool integer = false;
      if (!parse_number(item, x, integer)) fail(line, "array element '" + item + "' is not a number");
      v.array.push_back(x);
    }
    return v;
  }
  bool integer = false;
  if (!parse_number(raw, v.number, integer)) fail(line, "cannot parse value '" + raw + "'");
  v.kind = integer ? ConfigValue::Kind::integer : ConfigValue::Kind::real;
  return v;
}

// Typed accessors that record which keys were consumed.
class Reader {
 public:
  explicit Reader(const ConfigTable& table) : table_(table) {}

  const ConfigValue* find(const std::string& key) {
    auto it = table_.find(key);
    if (it == table_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  void read(const std::string& key, std::size_t& out) {
    if (const auto* v = find(key)) {
      if (v->kind != ConfigValue::Kind::integer || v->number < 0) {
        fail(v->line, key + ": expected a non-negative integer");
      }
      out = static_cast<std::size_t>(v->number);
    }
  }

  void read(const std::string& key, double& out) {
    if (const auto* v = find(key)) {
      if (v->kind != ConfigValue::Kind::integer && v->kind != ConfigValue::Kind::real) {
        fail(v->line, key + ": expected a number");
      }
      out = v->number;
    }
  }

  void read(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (v->kind != ConfigValue::Kind::boolean) fail(v->line, key + ": expected true or false");
      out = v->boolean;
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (v->kind != ConfigValue::Kind::string) fail(v->line, key + ": expected a quoted string");
      out = v->text;
    }
  }

  std::optional<std::vector<std::size_t>> sizes(const std::string& key) {
    const auto* v = find(key);
    if (!v) return std::nullopt;
    if (v->kind != ConfigValue::Kind::array) fail(v->line, key + ": expected an array of integers");
    std::vector<std::size_t> out;
    for (double x : v->array) {
      if (x < 0 || x != static_cast<double>(static_cast<std::size_t>(x))) {
        fail(v->line, key + ": expected non-negative integers");
      }
      out.push_back(static_cast<std::size_t>(x));
    }
    return out;
  }

  void reject_unknown() const {
    for (const auto& [key, value] : table_) {
      if (!used_.count(key)) fail(value.line, "unknown key '" + key + "'");
    }
  }

 private:
  const ConfigTable& table_;
  std::set<std::string> used_;
};

template <typename Enum>
Enum parse_enum(const std::string& key, const std::string& value,
                std::initializer_list<std::pair<const char*, Enum>> options) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (value == name) return e;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(key + ": unknown value '" + value + "' (expected " + names + ")");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

}  // namespace

ConfigTable parse_config_text(std::string_view text) {
  ConfigTable table;
  std::string section;
  std::size_t line_no = 0;
  std::stringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(line_no, "malformed section header");
      section = trim(std::string_view(s).substr(1, s.size() - 2));
      if (section.empty()) fail(line_no, "empty section name");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    const std::string key = trim(std::string_view(s).substr(0, eq));
    if (key.empty()) fail(line_no, "missing key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.count(full)) fail(line_no, "duplicate key '" + full + "'");
    table[full] = parse_value(trim(std::string_view(s).substr(eq + 1)), line_no);
  }
  return table;
}

RunConfig RunConfig::parse(std::string_view text) {
  const ConfigTable table = parse_config_text(text);
  Reader r(table);
  RunConfig c;
  r.read("seed", c.seed);
  r.read("threads", c.threads);
  std::string ablation = "full";
  r.read("ablation", ablation);
  r.read("pool_first", c.model.pool_first);
  if (const auto* v = r.find("target_macro_f1")) {
    if (v->kind != ConfigValue::Kind::integer && v->kind != ConfigValue::Kind::real) {
      fail(v->line, "target_macro_f1: expected a number");
    }
    c.target_macro_f1 = v->number;
  }

  DataSpec& d = c.data;
  r.read("data.source", d.source);
  std::string path;
  r.read("data.path", path);
  d.path = path;
  r.read("data.split", d.split);
  r.read("data.classes", d.classes);
  r.read("data.per_class", d.per_class);
  r.read("data.size", d.size);
  r.read("data.channels", d.channels);
  r.read("data.noise", d.noise);
  d.seed = c.seed;
  r.read("data.seed", d.seed);
  if (d.source == "cifar10") {
    d.classes = 10;
    d.size = 32;
    d.channels = 3;
  }

  ModelConfig& m = c.model;
  m.in_channels = d.channels;
  m.image_height = m.image_width = d.size;
  m.num_classes = d.classes;

  const auto channels = r.sizes("backbone.channels");
  const auto kernels = r.sizes("backbone.kernels");
  const auto strides = r.sizes("backbone.strides");
  const auto paddings = r.sizes("backbone.paddings");
  std::string activation = "relu";
  r.read("backbone.activation", activation);
  const Activation act = parse_enum<Activation>("backbone.activation", activation,
                                                {{"relu", Activation::relu}, {"none", Activation::none}});
  if (channels) {
    const std::size_t n = channels->size();
    auto check = [&](const std::optional<std::vector<std::size_t>>& v, const char* key) {
      if (v && v->size() != n) {
        throw ConfigError(std::string(key) + ": expected " + std::to_string(n) + " entries to match backbone.channels");
      }
    };
    check(kernels, "backbone.kernels");
    check(strides, "backbone.strides");
    check(paddings, "backbone.paddings");
    m.backbone.layers.clear();
    for (std::size_t i = 0; i < n; ++i) {
      ConvLayerSpec l;
      l.out_channels = (*channels)[i];
      l.kernel = kernels ? (*kernels)[i] : 3;
      l.stride = strides ? (*strides)[i] : 1;
      l.padding = paddings ? (*paddings)[i] : l.kernel / 2;
      l.activation = act;
      m.backbone.layers.push_back(l);
    }
  } else {
    if (kernels || strides || paddings) throw ConfigError("backbone: kernels/strides/paddings require backbone.channels");
    for (auto& l : m.backbone.layers) l.activation = act;
  }

  r.read("patching.k", m.patch_size);

  std::string mode = "moore";
  r.read("graph.mode", mode);
  m.neighborhood.mode =
      parse_enum<Connectivity>("graph.mode", mode, {{"moore", Connectivity::moore}, {"knn", Connectivity::knn}});
  r.read("graph.knn_k", m.neighborhood.k);
  if (const auto* v = r.find("graph.sigma_sq")) {
    if (v->kind == ConfigValue::Kind::string && v->text == "auto") {
      m.sigma_sq.reset();
    } else if (v->kind == ConfigValue::Kind::integer || v->kind == ConfigValue::Kind::real) {
      if (!(v->number > 0.0)) fail(v->line, "graph.sigma_sq: must be positive");
      m.sigma_sq = v->number;
    } else {
      fail(v->line, "graph.sigma_sq: expected a positive number or \"auto\"");
    }
  }

  GatStackConfig& g = m.gat;
  r.read("gat.d_in", g.d_in);
  r.read("gat.hidden", g.d_hidden);
  r.read("gat.out", g.d_out);
  r.read("gat.layers", g.layers);
  r.read("gat.heads", g.heads);
  std::string first = "graphconv";
  r.read("gat.first_layer", first);
  g.first_layer = parse_enum<FirstLayer>("gat.first_layer", first,
                                         {{"graphconv", FirstLayer::graphconv}, {"gat", FirstLayer::gat}});
  r.read("gat.leaky_slope", g.leaky_slope);
  r.read("gat.self_loops", g.self_loops);
  r.read("gat.use_edge_weight_bias", g.use_edge_weight_bias);

  TransformerConfig& t = m.transformer;
  r.read("transformer.d_model", t.d_model);
  r.read("transformer.heads", t.n_heads);
  r.read("transformer.layers", t.layers);
  r.read("transformer.d_ff", t.d_ff);
  std::string pos = "sinusoidal";
  r.read("transformer.pos_encoding", pos);
  t.pos_encoding = parse_enum<PosEncoding>(
      "transformer.pos_encoding", pos,
      {{"sinusoidal", PosEncoding::sinusoidal}, {"learned", PosEncoding::learned}, {"none", PosEncoding::none}});

  OptimSpec& o = c.optim;
  r.read("optim.lr", o.lr0);
  r.read("optim.weight_decay", o.weight_decay);
  r.read("optim.beta1", o.beta1);
  r.read("optim.beta2", o.beta2);
  r.read("optim.eps", o.eps);
  r.read("optim.warmup_epochs", o.warmup_epochs);
  r.read("optim.epochs", o.total_epochs);
  r.read("optim.clip_norm", o.clip_norm);
  c.batch_size_explicit = table.count("optim.batch_size") > 0;
  r.read("optim.batch_size", o.batch_size);
  r.read("optim.decoupled_weight_decay", o.decoupled_weight_decay);

  r.reject_unknown();
  c.set_ablation(parse_ablation(ablation));
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::set_ablation(Ablation ablation) {
  model.ablation = ablation;
  model.gat.d_in = 0;
  if (ablation == Ablation::no_backbone && !batch_size_explicit) optim.batch_size = 32;
}

void RunConfig::validate() const {
  if (data.source != "synthetic" && data.source != "cifar10" && data.source != "sgt_dir") {
    throw ConfigError("data.source: unknown value '" + data.source + "' (expected synthetic, cifar10, sgt_dir)");
  }
  if (data.source != "synthetic" && data.path.empty()) throw ConfigError("data.path is required for " + data.source);
  if (data.channels == 0 || data.size == 0) throw ConfigError("data.channels and data.size must be positive");
  if (data.noise < 0.0) throw ConfigError("data.noise must be non-negative");
  if (target_macro_f1 && (*target_macro_f1 < 0.0 || *target_macro_f1 > 1.0)) {
    throw ConfigError("target_macro_f1 must lie in [0, 1]");
  }
  optim.validate();
  (void)model.resolved();
}

std::string RunConfig::to_toml() const {
  std::ostringstream os;
  const ModelConfig& m = model;
  os << "seed = " << seed << "\n";
  os << "threads = " << threads << "\n";
  os << "ablation = \"" << to_string(m.ablation) << "\"\n";
  os << "pool_first = " << (m.pool_first ? "true" : "false") << "\n";
  if (target_macro_f1) os << "target_macro_f1 = " << format_double(*target_macro_f1) << "\n";

  os << "\n[data]\n";
  os << "source = \"" << data.source << "\"\n";
  if (!data.path.empty()) os << "path = \"" << data.path.string() << "\"\n";
  os << "split = \"" << data.split << "\"\n";
  os << "classes = " << data.classes << "\n";
  os << "per_class = " << data.per_class << "\n";
  os << "size = " << data.size << "\n";
  os << "channels = " << data.channels << "\n";
  os << "noise = " << format_double(data.noise) << "\n";
  os << "seed = " << data.seed << "\n";

  std::vector<std::size_t> ch, ks, st, pd;
  for (const auto& l : m.backbone.layers) {
    ch.push_back(l.out_channels);
    ks.push_back(l.kernel);
    st.push_back(l.stride);
    pd.push_back(l.padding);
  }
  os << "\n[backbone]\n";
  os << "channels = " << join(ch) << "\n";
  os << "kernels = " << join(ks) << "\n";
  os << "strides = " << join(st) << "\n";
  os << "paddings = " << join(pd) << "\n";
  const bool relu_act = m.backbone.layers.empty() || m.backbone.layers.front().activation == Activation::relu;
  os << "activation = \"" << (relu_act ? "relu" : "none") << "\"\n";

  os << "\n[patching]\nk = " << m.patch_size << "\n";

  os << "\n[graph]\n";
  os << "mode = \"" << (m.neighborhood.mode == Connectivity::moore ? "moore" : "knn") << "\"\n";
  os << "knn_k = " << m.neighborhood.k << "\n";
  if (m.sigma_sq) {
    os << "sigma_sq = " << format_double(*m.sigma_sq) << "\n";
  } else {
    os << "sigma_sq = \"auto\"\n";
  }

  os << "\n[gat]\n";
  os << "hidden = " << m.gat.d_hidden << "\n";
  os << "out = " << m.gat.d_out << "\n";
  os << "layers = " << m.gat.layers << "\n";
  os << "heads = " << m.gat.heads << "\n";
  os << "first_layer = \"" << (m.gat.first_layer == FirstLayer::graphconv ? "graphconv" : "gat") << "\"\n";
  os << "leaky_slope = " << format_double(m.gat.leaky_slope) << "\n";
  os << "self_loops = " << (m.gat.self_loops ? "true" : "false") << "\n";
  os << "use_edge_weight_bias = " << (m.gat.use_edge_weight_bias ? "true" : "false") << "\n";

  const char* pos = m.transformer.pos_encoding == PosEncoding::sinusoidal ? "sinusoidal"
                    : m.transformer.pos_encoding == PosEncoding::learned  ? "learned"
                                                                          : "none";
  os << "\n[transformer]\n";
  os << "d_model = " << m.transformer.d_model << "\n";
  os << "heads = " << m.transformer.n_heads << "\n";
  os << "layers = " << m.transformer.layers << "\n";
  os << "d_ff = " << m.transformer.d_ff << "\n";
  os << "pos_encoding = \"" << pos << "\"\n";

  os << "\n[optim]\n";
  os << "lr = " << format_double(optim.lr0) << "\n";
  os << "weight_decay = " << format_double(optim.weight_decay) << "\n";
  os << "beta1 = " << format_double(optim.beta1) << "\n";
  os << "beta2 = " << format_double(optim.beta2) << "\n";
  os << "eps = " << format_double(optim.eps) << "\n";
  os << "warmup_epochs = " << format_double(optim.warmup_epochs) << "\n";
  os << "epochs = " << format_double(optim.total_epochs) << "\n";
  os << "clip_norm = " << format_double(optim.clip_norm) << "\n";
  os << "batch_size = " << optim.batch_size << "\n";
  os << "decoupled_weight_decay = " << (optim.decoupled_weight_decay ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace sagvit
