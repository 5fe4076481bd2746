#include "ctm/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "ctm/errors.hpp"

namespace ctm {

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

std::size_t count_occurrences(const std::vector<std::string>& hay,
                              const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(i))) ++count;
  }
  return count;
}

}  // namespace

std::string_view front_end_name(FrontEnd f) {
  return f == FrontEnd::kWordpiece ? "wordpiece" : "char";
}

FrontEnd parse_front_end(std::string_view name) {
  if (name == "wordpiece") return FrontEnd::kWordpiece;
  if (name == "char") return FrontEnd::kChar;
  throw ConfigError("unknown front-end '" + std::string(name) + "'");
}

std::vector<bool> FormattedInput::attention_mask() const {
  std::vector<bool> mask(ids.size(), false);
  for (std::size_t i = 0; i < std::min(layout.total(), ids.size()); ++i) mask[i] = true;
  return mask;
}

std::string_view class_name(EntityClass c) {
  switch (c) {
    case EntityClass::kBrand: return "brand";
    case EntityClass::kProduct: return "product";
    case EntityClass::kFeature: return "feature";
  }
  return "?";
}

std::optional<EntityClass> parse_class(std::string_view name) {
  for (EntityClass c : kAllClasses) {
    if (class_name(c) == name) return c;
  }
  return std::nullopt;
}

bool entity_in_title(std::string_view title, std::string_view entity) {
  return count_occurrences(basic_tokenize(title), basic_tokenize(entity)) > 0;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read corpus " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 3) {
      throw ParseError(line_no, "expected 3 tab-separated columns, found " +
                                    std::to_string(cols.size()));
    }
    const auto cls = parse_class(cols[0]);
    if (!cls) {
      corpus.rejects.push_back({line_no, "unknown entity type '" + cols[0] + "'", line});
      continue;
    }
    if (basic_tokenize(cols[1]).empty()) {
      corpus.rejects.push_back({line_no, "empty entity", line});
      continue;
    }
    if (!entity_in_title(cols[2], cols[1])) {
      corpus.rejects.push_back({line_no, "entity is not a whole-token substring of the title", line});
      continue;
    }
    corpus.examples.push_back({cols[2], cols[1], *cls});
  }
  if (in.bad()) throw DataError("failed reading corpus " + path.string());
  return corpus;
}

void write_corpus(const std::filesystem::path& path,
                  const std::vector<Example>& examples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus " + path.string());
  for (const Example& ex : examples) {
    out << class_name(ex.gold) << '\t' << ex.entity << '\t' << ex.title << '\n';
  }
  if (!out) throw DataError("failed writing corpus " + path.string());
}

void write_rejects(const std::filesystem::path& path,
                   const std::vector<RejectedLine>& rejects) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write rejects report " + path.string());
  out << "line\treason\ttext\n";
  for (const RejectedLine& r : rejects) {
    std::string text = r.text;
    std::replace(text.begin(), text.end(), '\t', ' ');
    out << r.line << '\t' << r.reason << '\t' << text << '\n';
  }
}

std::array<PairedExample, 2> make_pairs(const Example& ex, Rng& rng) {
  std::array<EntityClass, 2> others{};
  std::size_t k = 0;
  for (EntityClass c : kAllClasses) {
    if (c != ex.gold) others[k++] = c;
  }
  const EntityClass negative = others[rng.index(2)];
  return {PairedExample{ex.title, ex.entity, ex.gold, true},
          PairedExample{ex.title, ex.entity, negative, false}};
}

std::vector<PairedExample> make_all_pairs(const std::vector<Example>& examples,
                                          Rng& rng) {
  std::vector<PairedExample> pairs;
  pairs.reserve(2 * examples.size());
  for (const Example& ex : examples) {
    for (auto& p : make_pairs(ex, rng)) pairs.push_back(std::move(p));
  }
  return pairs;
}

TextUnits text_units(std::string_view text, FrontEnd front_end, const Vocab& vocab) {
  TextUnits u;
  if (front_end == FrontEnd::kWordpiece) {
    auto wp = tokenize_wordpiece(text, vocab);
    u.ids = std::move(wp.ids);
    u.tokens = std::move(wp.pieces);
  } else {
    u.tokens = basic_tokenize(text);
    for (const std::string& w : u.tokens) u.ids.push_back(vocab.id_or_unk(w));
  }
  return u;
}

FormattedInput format_input(std::string_view title, std::string_view entity,
                            const HypothesisSlot& hypothesis, FrontEnd front_end,
                            const Vocab& vocab, std::size_t max_seq,
                            std::size_t pad_to) {
  FormattedInput f;
  f.front_end = front_end;
  auto push = [&](int id, std::string token, bool reserved) {
    f.ids.push_back(id);
    f.tokens.push_back(std::move(token));
    f.reserved.push_back(reserved);
  };
  auto push_units = [&](const TextUnits& u) {
    for (std::size_t i = 0; i < u.ids.size(); ++i) push(u.ids[i], u.tokens[i], false);
  };

  const TextUnits x = text_units(title, front_end, vocab);
  const TextUnits e = text_units(entity, front_end, vocab);
  f.layout.n = x.ids.size();
  f.layout.m = e.ids.size();
  push(kClsId, vocab.token(kClsId), true);
  push_units(x);
  push(kSepId, vocab.token(kSepId), true);
  push_units(e);
  if (const auto* lit = std::get_if<LiteralHypothesis>(&hypothesis)) {
    const TextUnits h = text_units(lit->text, front_end, vocab);
    f.layout.p = h.ids.size();
    push_units(h);
  } else if (const auto* prompt = std::get_if<PromptHypothesis>(&hypothesis)) {
    f.layout.p = prompt->length;
    f.prompt_slot = true;
    for (std::size_t i = 0; i < prompt->length; ++i) push(kPadId, "[PROMPT]", true);
  }
  if (f.layout.total() > max_seq) {
    throw LengthError("formatted input of length " + std::to_string(f.layout.total()) +
                      " exceeds max_seq " + std::to_string(max_seq) + " for title '" +
                      std::string(title) + "' / entity '" + std::string(entity) + "'");
  }
  while (f.ids.size() < pad_to) push(kPadId, vocab.token(kPadId), true);
  return f;
}

std::vector<Example> build_novel_entity_set(const std::vector<Example>& train,
                                            const std::vector<Example>& test) {
  std::unordered_set<std::string> seen;
  for (const Example& ex : train) seen.insert(lowercase(ex.entity));
  std::vector<Example> novel;
  for (const Example& ex : test) {
    if (!seen.contains(lowercase(ex.entity))) novel.push_back(ex);
  }
  return novel;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

const std::vector<std::string>& real_brand_pool() {
  static const std::vector<std::string> pool = {
      "Nike", "Adidas", "NAGANO", "Zebra", "INGCO", "Hugo Boss",
      "Maison Louis Marie", "Cheeks Ahoy", "Apple", "Samsung", "Sony",
      "Logitech", "Philips", "Bosch", "LEGO", "Canon", "Dell", "Lenovo",
      "Asus", "Puma", "Reebok", "Levis", "Gucci", "Prada", "IKEA", "Dyson",
      "Braun", "Oral B", "Colgate", "Nivea", "Loreal", "Maybelline",
      "Revlon", "Olay", "Dove", "Pampers", "Huggies", "Gillette", "Casio",
      "Seiko", "Fossil", "Timex", "Garmin", "Fitbit", "Anker", "Belkin",
      "SanDisk", "Kingston", "Corsair", "Razer", "Epson", "Brother",
      "Sharpie", "Pilot", "Bic", "Staedtler", "Crayola", "Hasbro", "Mattel",
      "Fisher Price", "Nerf", "Coleman", "Yeti", "Stanley", "Thermos",
      "Contigo", "Pyrex", "Tefal", "Le Creuset", "Lodge", "Cuisinart",
      "Keurig", "Nespresso", "Lavazza", "Nestle", "Heinz", "Nutella",
  };
  return pool;
}

const std::vector<std::string>& product_pool() {
  static const std::vector<std::string> pool = {
      "Chairs", "Hoodie", "Towels", "Perfume Oil", "Discovery Set", "EDT",
      "Gel Pen", "Sneakers", "Running Shoes", "Backpack", "Water Bottle",
      "Coffee Maker", "Headphones", "Earbuds", "Keyboard", "Mouse",
      "Monitor", "Laptop Stand", "Phone Case", "Charger", "USB Cable",
      "Power Bank", "Desk Lamp", "Pillow", "Blanket", "Mattress",
      "Sofa Cover", "Curtains", "Rug", "Mug", "Teapot", "Frying Pan",
      "Saucepan", "Knife Set", "Cutting Board", "Blender", "Toaster",
      "Kettle", "Vacuum Cleaner", "Hair Dryer", "Shampoo", "Conditioner",
      "Body Lotion", "Face Cream", "Lipstick", "Mascara", "Nail Polish",
      "Toothbrush", "Toothpaste", "Razor", "Diapers", "Baby Wipes",
      "Stroller", "Toy Car", "Puzzle", "Board Game", "Building Blocks",
      "Doll", "Tent", "Sleeping Bag", "Camping Chair", "Flashlight", "Watch",
      "Wallet", "Handbag", "Sunglasses", "Belt", "Scarf", "Gloves", "Socks",
      "Jeans", "Jacket", "Dress", "Skirt", "Leggings", "Pajamas", "Slippers",
      "Boots", "Sandals", "Notebook", "Pencil Case", "Markers", "Crayons",
      "Stapler", "Printer Paper", "Ink Cartridge", "Memory Card",
      "Flash Drive", "Mouse Pad", "Webcam", "Speaker", "Tripod",
      "Camera Bag", "Towel Rack", "Lunch Box",
  };
  return pool;
}

const std::vector<std::string>& feature_pool() {
  static const std::vector<std::string> pool = {
      "Black", "White", "Red", "Dark Blue", "Navy", "Green", "Pink", "Grey",
      "Beige", "Gold", "Silver", "Purple", "Yellow", "Orange", "Small",
      "Medium", "Large", "XL", "XXL", "100% Cotton", "Stainless Steel",
      "Leather", "Wooden", "Bamboo", "Ceramic", "Glass", "Set of 2",
      "Set of 4", "Pack of 3", "Pack of 12", "2 Pcs", "142 Pcs", "30 Bags",
      "6 Count", "2.5 Oz", "500 ml", "1 L", "990g", "33g", "0.7 mm",
      "10 Inch", "15.6 Inch", "64GB", "128 GB", "1000W", "for Men",
      "for Women", "for Kids", "Waterproof", "Wireless", "Rechargeable",
      "Portable", "Non Stick", "Organic", "Unscented", "Retractable",
      "Foldable", "Adjustable", "Lightweight", "Extra Soft", "King Size",
      "Queen Size", "Long Sleeve", "Slim Fit", "USB C", "Bluetooth 5.0",
      "4K", "1080p", "Sweet Spicy", "Low Sugar", "Travel Size",
  };
  return pool;
}

const std::vector<std::string>& syllables() {
  static const std::vector<std::string> pool = {
      "Ga", "Zu", "Xi", "Qo", "Ka", "Lu", "Vex", "Tro", "Fa", "Shern", "Mi",
      "Ko", "Zo", "Bi", "Ny", "Qua", "Ix", "Zee", "Kru", "Vo", "Yaz", "Plo",
      "Dex", "Wu", "Jin", "Rax", "Oz", "Fu",
  };
  return pool;
}

// Slot markers: "B" brand, "P" product, "F" feature; anything else is literal.
const std::vector<std::vector<std::string>>& templates() {
  static const std::vector<std::vector<std::string>> t = {
      {"B", "P", "F"},
      {"B", "F", "P"},
      {"B", "P", "-", "F"},
      {"F", "P", "-", "B"},
      {"B", "F", "P", ",", "F"},
      {"P", "by", "B", ",", "F"},
      {"B", "P", "with", "F"},
      {"B", "New", "P", "(", "F", ")"},
      {"(", "F", ")", "P", "-", "B"},
      {"B", "Premium", "P", "F", "F"},
  };
  return t;
}

std::size_t slot_count(const std::vector<std::string>& tmpl, const char* slot) {
  return static_cast<std::size_t>(std::count(tmpl.begin(), tmpl.end(), slot));
}

std::string make_up_brand(Rng& rng) {
  const auto& syl = syllables();
  const std::size_t n = 2 + rng.index(2);
  std::string name;
  for (std::size_t i = 0; i < n; ++i) name += syl[rng.index(syl.size())];
  return name;
}

template <typename T>
std::vector<T> take_shuffled(const std::vector<T>& pool, std::size_t n, Rng& rng) {
  std::vector<T> copy = pool;
  rng.shuffle(copy.begin(), copy.end());
  copy.resize(n);
  return copy;
}

class TitleFactory {
 public:
  // Pools of lexicon texts available for context slots, per class.
  std::array<std::vector<std::string>, kNumClasses> context;

  // Builds a title containing `entity` exactly once in a slot of class `cls`.
  Example make(const std::string& entity, EntityClass cls, Rng& rng) const {
    const auto entity_tokens = basic_tokenize(entity);
    for (int attempt = 0; attempt < 200; ++attempt) {
      const auto& tmpl = templates()[rng.index(templates().size())];
      const char* marker = cls == EntityClass::kBrand     ? "B"
                           : cls == EntityClass::kProduct ? "P"
                                                          : "F";
      const std::size_t slots = slot_count(tmpl, marker);
      if (slots == 0) continue;
      const std::size_t chosen = rng.index(slots);
      std::size_t seen = 0;
      std::vector<std::string> parts;
      for (const std::string& piece : tmpl) {
        if (piece == marker && seen++ == chosen) {
          parts.push_back(entity);
        } else if (piece == "B" || piece == "P" || piece == "F") {
          const EntityClass c = piece == "B"   ? EntityClass::kBrand
                                : piece == "P" ? EntityClass::kProduct
                                               : EntityClass::kFeature;
          const auto& pool = context[class_index(c)];
          parts.push_back(pool[rng.index(pool.size())]);
        } else {
          parts.push_back(piece);
        }
      }
      std::string title;
      for (const std::string& p : parts) {
        const bool glue_left = p == "," || p == ")";
        const bool prev_open = !title.empty() && title.back() == '(';
        if (!title.empty() && !glue_left && !prev_open) title += ' ';
        title += p;
      }
      if (count_occurrences(basic_tokenize(title), entity_tokens) == 1) {
        return Example{title, entity, cls};
      }
    }
    throw ConfigError("synthetic generator could not place entity '" + entity +
                      "' unambiguously; lexicons are too small");
  }
};

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, Rng& rng) {
  if (!(spec.reserve_fraction >= 0.0 && spec.reserve_fraction < 1.0)) {
    throw ConfigError("reserve_fraction must lie in [0, 1)");
  }
  std::size_t total = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) total += spec.train_counts[c] + spec.test_counts[c];
  if (total == 0) throw ConfigError("synthetic corpus: zero examples requested");
  if (spec.made_up_brands > spec.brand_lexicon) {
    throw ConfigError("made_up_brands exceeds brand_lexicon");
  }
  const std::size_t real_brands = spec.brand_lexicon - spec.made_up_brands;
  if (real_brands > real_brand_pool().size() ||
      spec.product_lexicon > product_pool().size() ||
      spec.feature_lexicon > feature_pool().size()) {
    throw ConfigError("requested lexicon sizes exceed the built-in pools (" +
                      std::to_string(real_brand_pool().size()) + " brands, " +
                      std::to_string(product_pool().size()) + " products, " +
                      std::to_string(feature_pool().size()) + " features)");
  }

  GenerationManifest manifest;
  manifest.seed = rng.seed();
  manifest.spec = spec;

  Rng lex_rng = rng.split(1);
  std::set<std::string> used_lower;
  auto add_entry = [&](std::string text, EntityClass cls, bool made_up) {
    if (!used_lower.insert(lowercase(text)).second) return false;
    manifest.lexicon.push_back({std::move(text), cls, false, made_up});
    return true;
  };
  for (auto& p : take_shuffled(product_pool(), spec.product_lexicon, lex_rng)) {
    add_entry(p, EntityClass::kProduct, false);
  }
  for (auto& f : take_shuffled(feature_pool(), spec.feature_lexicon, lex_rng)) {
    add_entry(f, EntityClass::kFeature, false);
  }
  for (auto& b : take_shuffled(real_brand_pool(), real_brands, lex_rng)) {
    add_entry(b, EntityClass::kBrand, false);
  }
  std::size_t made = 0;
  for (int guard = 0; made < spec.made_up_brands; ++guard) {
    if (guard > 100000) throw ConfigError("cannot generate enough distinct made-up brands");
    if (add_entry(make_up_brand(lex_rng), EntityClass::kBrand, true)) ++made;
  }

  for (EntityClass cls : {EntityClass::kBrand, EntityClass::kProduct}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < manifest.lexicon.size(); ++i) {
      if (manifest.lexicon[i].cls == cls) idx.push_back(i);
    }
    lex_rng.shuffle(idx.begin(), idx.end());
    const auto n_reserved = static_cast<std::size_t>(
        std::floor(spec.reserve_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < n_reserved; ++i) manifest.lexicon[idx[i]].reserved = true;
  }

  std::array<std::vector<std::string>, kNumClasses> shared, all, reserved;
  for (const LexiconEntry& e : manifest.lexicon) {
    all[class_index(e.cls)].push_back(e.text);
    (e.reserved ? reserved : shared)[class_index(e.cls)].push_back(e.text);
  }

  auto class_sequence = [](const std::array<std::size_t, kNumClasses>& counts, Rng& r) {
    std::vector<EntityClass> seq;
    for (EntityClass c : kAllClasses) seq.insert(seq.end(), counts[class_index(c)], c);
    r.shuffle(seq.begin(), seq.end());
    return seq;
  };
  auto check_capacity = [&](const std::array<std::size_t, kNumClasses>& counts,
                            const std::array<std::vector<std::string>, kNumClasses>& pools,
                            const char* split) {
    for (EntityClass c : kAllClasses) {
      const std::size_t n = counts[class_index(c)];
      if (n == 0) continue;
      double capacity = static_cast<double>(templates().size());
      for (const auto& pool : pools) capacity *= static_cast<double>(pool.size());
      if (pools[class_index(c)].empty() || static_cast<double>(n) > capacity) {
        throw ConfigError(std::string("synthetic corpus: ") + split + " count " +
                          std::to_string(n) + " for class " +
                          std::string(class_name(c)) +
                          " exceeds template capacity of the lexicon");
      }
    }
  };

  SyntheticCorpus corpus;
  // Training titles use only shared lexicon entries, also for context slots.
  check_capacity(spec.train_counts, shared, "train");
  TitleFactory train_factory{shared};
  Rng train_rng = rng.split(2);
  std::array<std::set<std::string>, kNumClasses> train_entities;
  for (EntityClass c : class_sequence(spec.train_counts, train_rng)) {
    const auto& pool = shared[class_index(c)];
    const std::string& entity = pool[train_rng.index(pool.size())];
    train_entities[class_index(c)].insert(entity);
    corpus.train.push_back(train_factory.make(entity, c, train_rng));
  }

  // Test entities: reserved entries plus shared entries that occurred as
  // training entities.
  std::array<std::vector<std::string>, kNumClasses> test_pool;
  std::set<std::string> reserved_set;
  for (EntityClass c : kAllClasses) {
    const std::size_t i = class_index(c);
    test_pool[i].assign(train_entities[i].begin(), train_entities[i].end());
    for (const std::string& r : reserved[i]) {
      test_pool[i].push_back(r);
      reserved_set.insert(r);
    }
  }
  for (EntityClass c : kAllClasses) {
    if (spec.test_counts[class_index(c)] > 0 && test_pool[class_index(c)].empty()) {
      throw ConfigError("synthetic corpus: no test entities available for class " +
                        std::string(class_name(c)));
    }
  }
  check_capacity(spec.test_counts, all, "test");
  TitleFactory test_factory{all};
  Rng test_rng = rng.split(3);
  for (EntityClass c : class_sequence(spec.test_counts, test_rng)) {
    const auto& pool = test_pool[class_index(c)];
    const std::string& entity = pool[test_rng.index(pool.size())];
    if (reserved_set.contains(entity)) ++manifest.reserved_test_examples;
    corpus.test.push_back(test_factory.make(entity, c, test_rng));
  }

  Rng background_rng = rng.split(4);
  for (EntityClass c : class_sequence(spec.train_counts, background_rng)) {
    const auto& pool = all[class_index(c)];
    const std::string& entity = pool[background_rng.index(pool.size())];
    corpus.background.push_back(test_factory.make(entity, c, background_rng).title);
  }
  corpus.manifest = std::move(manifest);
  return corpus;
}

void write_manifest(const std::filesystem::path& path,
                    const GenerationManifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  const SyntheticSpec& s = manifest.spec;
  out << "# synthetic corpus manifest\n";
  out << "seed\t" << manifest.seed << '\n';
  out << "reserve_fraction\t" << s.reserve_fraction << '\n';
  for (EntityClass c : kAllClasses) {
    out << "train_count\t" << class_name(c) << '\t' << s.train_counts[class_index(c)] << '\n';
  }
  for (EntityClass c : kAllClasses) {
    out << "test_count\t" << class_name(c) << '\t' << s.test_counts[class_index(c)] << '\n';
  }
  out << "brand_lexicon\t" << s.brand_lexicon << '\n';
  out << "made_up_brands\t" << s.made_up_brands << '\n';
  out << "product_lexicon\t" << s.product_lexicon << '\n';
  out << "feature_lexicon\t" << s.feature_lexicon << '\n';
  out << "reserved_test_examples\t" << manifest.reserved_test_examples << '\n';
  out << "# lexicon\tclass\tsplit\torigin\ttext\n";
  for (const LexiconEntry& e : manifest.lexicon) {
    out << "lexicon\t" << class_name(e.cls) << '\t'
        << (e.reserved ? "test-only" : "shared") << '\t'
        << (e.made_up ? "made-up" : "listed") << '\t' << e.text << '\n';
  }
  if (!out) throw DataError("failed writing manifest " + path.string());
}

}  // namespace ctm
