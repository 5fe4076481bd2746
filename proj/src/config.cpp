#include "ctm/config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <type_traits>
#include <variant>

#include "ctm/errors.hpp"

namespace ctm {

namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>,
              "seed is parsed through the size_t field path");

using Field = std::variant<std::size_t RunConfig::*, double RunConfig::*,
                           std::string RunConfig::*>;

struct FieldSpec {
  const char* name;
  Field field;
};

const std::vector<FieldSpec>& fields() {
  static const std::vector<FieldSpec> f = {
      {"model", &RunConfig::model},
      {"dataset", &RunConfig::dataset},
      {"max_seq", &RunConfig::max_seq},
      {"batch_size", &RunConfig::batch_size},
      {"learning_rate", &RunConfig::learning_rate},
      {"epoch", &RunConfig::epoch},
      {"alpha_init", &RunConfig::alpha_init},
      {"fusion", &RunConfig::fusion},
      {"hypothesis_source", &RunConfig::hypothesis_source},
      {"seed", &RunConfig::seed},
      {"d", &RunConfig::d},
      {"layers", &RunConfig::layers},
      {"heads", &RunConfig::heads},
      {"ff_dim", &RunConfig::ff_dim},
      {"char_dim", &RunConfig::char_dim},
      {"vocab_size", &RunConfig::vocab_size},
      {"min_freq", &RunConfig::min_freq},
      {"pretrain_epochs", &RunConfig::pretrain_epochs},
      {"pretrain_learning_rate", &RunConfig::pretrain_learning_rate},
      {"pretrain_batch_size", &RunConfig::pretrain_batch_size},
      {"mask_rate", &RunConfig::mask_rate},
      {"tune_epochs", &RunConfig::tune_epochs},
      {"tune_learning_rate", &RunConfig::tune_learning_rate},
      {"tune_batch_size", &RunConfig::tune_batch_size},
      {"train_brand", &RunConfig::train_brand},
      {"train_product", &RunConfig::train_product},
      {"train_feature", &RunConfig::train_feature},
      {"test_brand", &RunConfig::test_brand},
      {"test_product", &RunConfig::test_product},
      {"test_feature", &RunConfig::test_feature},
      {"reserve_fraction", &RunConfig::reserve_fraction},
      {"brand_lexicon", &RunConfig::brand_lexicon},
      {"made_up_brands", &RunConfig::made_up_brands},
      {"product_lexicon", &RunConfig::product_lexicon},
      {"feature_lexicon", &RunConfig::feature_lexicon},
      {"variants", &RunConfig::variants},
  };
  return f;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || value.empty()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" +
                      std::string(value) + "'");
  }
  return out;
}

void require_one_of(const char* key, const std::string& value,
                    std::initializer_list<const char*> allowed) {
  for (const char* a : allowed) {
    if (value == a) return;
  }
  std::string list;
  for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
  throw ConfigError("config key '" + std::string(key) + "' must be one of " + list +
                    ", got '" + value + "'");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const FieldSpec& f : fields()) {
    if (key != f.name) continue;
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, std::string>) {
            this->*member = std::string(value);
          } else {
            this->*member = parse_number<T>(key, value);
          }
        },
        f.field);
    return;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const FieldSpec& f : fields()) {
    std::string v = std::visit(
        [&](auto member) -> std::string {
          using T = std::remove_cvref_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, std::string>) {
            return this->*member;
          } else if constexpr (std::is_same_v<T, double>) {
            return format_double(this->*member);
          } else {
            return std::to_string(this->*member);
          }
        },
        f.field);
    out.emplace_back(f.name, std::move(v));
  }
  return out;
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
  return out;
}

void RunConfig::validate() const {
  require_one_of("model", model, {"entity_typing", "textual_entailment", "ctm", "noprompt"});
  require_one_of("dataset", dataset, {"test", "novel", "made_up"});
  require_one_of("fusion", fusion, {"add", "concat", "bert-only", "char-only"});
  require_one_of("hypothesis_source", hypothesis_source,
                 {"label", "dictionary", "both", "handcrafted"});
  for (const auto& [name, v] :
       {std::pair<const char*, std::size_t>{"max_seq", max_seq}, {"batch_size", batch_size},
        {"d", d}, {"heads", heads}, {"ff_dim", ff_dim}, {"char_dim", char_dim},
        {"vocab_size", vocab_size}, {"pretrain_batch_size", pretrain_batch_size},
        {"tune_batch_size", tune_batch_size}}) {
    if (v == 0) throw ConfigError(std::string("config key '") + name + "' must be positive");
  }
  for (const auto& [name, v] :
       {std::pair<const char*, double>{"learning_rate", learning_rate},
        {"pretrain_learning_rate", pretrain_learning_rate},
        {"tune_learning_rate", tune_learning_rate}}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("config key '") + name + "' must be a positive number");
    }
  }
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
    throw ConfigError("config key 'mask_rate' must lie in (0, 1)");
  }
  if (!std::isfinite(alpha_init)) throw ConfigError("config key 'alpha_init' must be finite");
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      cfg.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace ctm
