#include "bhpeft/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "bhpeft/errors.hpp"

namespace bhpeft {

TaskKind parse_task(const std::string& name) {
  if (name == "classification") return TaskKind::classification;
  if (name == "regression") return TaskKind::regression;
  throw config_error("unknown task '" + name + "' (expected classification or regression)");
}

std::string task_name(TaskKind task) {
  return task == TaskKind::classification ? "classification" : "regression";
}

GenTask parse_gen_task(const std::string& name) {
  if (name == "keyword") return GenTask::keyword;
  if (name == "noisy-region") return GenTask::noisy_region;
  if (name == "phase-shift") return GenTask::phase_shift;
  if (name == "regression-count") return GenTask::regression_count;
  throw config_error("unknown generator task '" + name + "'");
}

std::string gen_task_name(GenTask task) {
  switch (task) {
    case GenTask::keyword: return "keyword";
    case GenTask::noisy_region: return "noisy-region";
    case GenTask::phase_shift: return "phase-shift";
    case GenTask::regression_count: return "regression-count";
  }
  return "?";
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

TokenPool token_pool(std::size_t vocab) {
  if (vocab < 16) throw config_error("vocab must be at least 16, got " + std::to_string(vocab));
  const std::size_t size = std::min<std::size_t>(64, vocab / 4);
  TokenPool pool;
  std::unordered_set<int> taken;
  for (std::size_t k = 0; pool.words.size() < size; ++k) {
    std::string word = "w" + std::to_string(k);
    int id = static_cast<int>(fnv1a64(word) % vocab);
    if (!taken.insert(id).second) continue;  // hash collision: skip candidate
    pool.words.push_back(std::move(word));
    pool.ids.push_back(id);
  }
  return pool;
}

namespace {

void shuffle_in_place(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

std::size_t draw_length(std::size_t n_max, Rng& rng) {
  const std::size_t lo = std::max<std::size_t>(4, n_max / 2);
  return lo + rng.index(n_max - lo + 1);
}

std::vector<int> distractor_sequence(std::size_t len, const std::vector<int>& distractors,
                                     Rng& rng) {
  std::vector<int> tokens(len);
  for (auto& t : tokens) t = distractors[rng.index(distractors.size())];
  return tokens;
}

// Exactly floor(n/2) positive labels, order shuffled.
std::vector<int> balanced_labels(std::size_t n, Rng& rng) {
  std::vector<int> labels(n, 0);
  for (std::size_t i = 0; i < n / 2; ++i) labels[i] = 1;
  shuffle_in_place(labels, rng);
  return labels;
}

Dataset keyword_like(std::size_t n, std::uint64_t seed, const GenParams& p, int keyword,
                     const std::vector<int>& distractors, const std::string& name) {
  Dataset ds;
  ds.task = TaskKind::classification;
  ds.classes = 2;
  ds.vocab = p.vocab;
  ds.generator = name;
  ds.seed = seed;
  Rng rng(seed);
  std::vector<int> labels = balanced_labels(n, rng);
  ds.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    std::size_t len = draw_length(p.n_max, rng);
    ex.tokens = distractor_sequence(len, distractors, rng);
    ex.label = labels[i];
    if (ex.label == 1) ex.tokens[rng.index(len)] = keyword;
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace

Dataset generate(GenTask task, std::size_t n, std::uint64_t seed, const GenParams& params) {
  if (n < 1) throw config_error("generator needs n >= 1");
  if (params.n_max < 4) throw config_error("generator needs n_max >= 4");
  TokenPool pool = token_pool(params.vocab);
  const std::size_t in_use = std::min(params.distinct_tokens, pool.ids.size());
  if (in_use < 4) {
    throw config_error("need at least 4 distinct tokens, got " + std::to_string(in_use));
  }
  const int primary = pool.ids[0];
  const int secondary = pool.ids[1];  // ambiguous marker / phase-2 keyword
  const std::vector<int> distractors(pool.ids.begin() + 2,
                                     pool.ids.begin() + static_cast<long>(in_use));

  switch (task) {
    case GenTask::keyword:
      return keyword_like(n, seed, params, primary, distractors, "keyword");

    case GenTask::phase_shift: {
      if (params.phase != 1 && params.phase != 2) {
        throw config_error("phase-shift: phase must be 1 or 2");
      }
      return keyword_like(n, seed, params, params.phase == 1 ? primary : secondary, distractors,
                          "phase-shift");
    }

    case GenTask::noisy_region: {
      if (params.ambig_fraction < 0.0 || params.ambig_fraction > 1.0) {
        throw config_error("noisy-region: ambig_fraction must be in [0,1]");
      }
      Dataset ds;
      ds.task = TaskKind::classification;
      ds.classes = 2;
      ds.vocab = params.vocab;
      ds.generator = "noisy-region";
      ds.seed = seed;
      Rng rng(seed);
      const std::size_t n_noisy =
          static_cast<std::size_t>(std::llround(params.ambig_fraction * static_cast<double>(n)));
      // Ambiguity flags first so the clean/noisy split is independent of the
      // per-example draws below.
      std::vector<int> noisy_flags(n, 0);
      for (std::size_t i = 0; i < n_noisy; ++i) noisy_flags[i] = 1;
      shuffle_in_place(noisy_flags, rng);
      std::vector<int> labels = balanced_labels(n, rng);
      // The flip rate of 1/2 is realized exactly: alternate flips over the
      // noisy examples in draw order, separately per base label so the flips
      // leave the overall class balance intact.
      std::size_t noisy_seen[2] = {0, 0};
      for (std::size_t i = 0; i < n; ++i) {
        Example ex;
        std::size_t len = draw_length(params.n_max, rng);
        ex.tokens = distractor_sequence(len, distractors, rng);
        int base = labels[i];
        std::size_t kw_pos = rng.index(len);
        if (base == 1) ex.tokens[kw_pos] = primary;
        ex.label = base;
        if (noisy_flags[i]) {
          // Place the marker somewhere that never overwrites the keyword.
          std::size_t m_pos = rng.index(len);
          if (m_pos == kw_pos) m_pos = (m_pos + 1) % len;
          ex.tokens[m_pos] = secondary;
          if (noisy_seen[base]++ % 2 == 0) ex.label = 1 - ex.label;
        }
        ds.examples.push_back(std::move(ex));
      }
      return ds;
    }

    case GenTask::regression_count: {
      Dataset ds;
      ds.task = TaskKind::regression;
      ds.classes = 0;
      ds.vocab = params.vocab;
      ds.generator = "regression-count";
      ds.seed = seed;
      Rng rng(seed);
      for (std::size_t i = 0; i < n; ++i) {
        Example ex;
        std::size_t len = draw_length(params.n_max, rng);
        ex.tokens = distractor_sequence(len, distractors, rng);
        std::size_t count = rng.index(std::min<std::size_t>(len, 8) + 1);
        std::vector<int> positions(len);
        for (std::size_t j = 0; j < len; ++j) positions[j] = static_cast<int>(j);
        shuffle_in_place(positions, rng);
        for (std::size_t j = 0; j < count; ++j) ex.tokens[positions[j]] = primary;
        ex.target = static_cast<double>(count) / static_cast<double>(len);
        ds.examples.push_back(std::move(ex));
      }
      return ds;
    }
  }
  throw config_error("unknown generator task");
}

std::pair<Dataset, Dataset> train_eval_split(GenTask task, std::size_t n_train, std::size_t n_eval,
                                             std::uint64_t seed, const GenParams& params) {
  Dataset all = generate(task, n_train + n_eval, seed, params);
  Dataset train = all;
  Dataset eval = all;
  train.examples.assign(all.examples.begin(), all.examples.begin() + static_cast<long>(n_train));
  eval.examples.assign(all.examples.begin() + static_cast<long>(n_train), all.examples.end());
  return {std::move(train), std::move(eval)};
}

Dataset load_text(const std::string& path, TaskKind task, int classes, std::size_t vocab,
                  std::size_t n_max) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open data file '" + path + "'");
  Dataset ds;
  ds.task = task;
  ds.classes = task == TaskKind::classification ? classes : 0;
  ds.vocab = vocab;
  ds.generator = "tsv";
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw input_error(path + ":" + std::to_string(line_no) + ": missing tab separator");
    }
    std::string text = line.substr(0, tab);
    std::string label = line.substr(tab + 1);
    for (auto& c : text) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    Example ex;
    std::istringstream words(text);
    std::string w;
    while (words >> w && ex.tokens.size() < n_max) {
      ex.tokens.push_back(static_cast<int>(fnv1a64(w) % vocab));
    }
    if (ex.tokens.empty()) {
      throw input_error(path + ":" + std::to_string(line_no) + ": empty text field");
    }
    try {
      if (task == TaskKind::classification) {
        std::size_t used = 0;
        int v = std::stoi(label, &used);
        if (used != label.size() || v < 0 || v >= classes) throw std::invalid_argument(label);
        ex.label = v;
      } else {
        std::size_t used = 0;
        ex.target = std::stod(label, &used);
        if (used != label.size()) throw std::invalid_argument(label);
      }
    } catch (const std::exception&) {
      throw input_error(path + ":" + std::to_string(line_no) + ": bad label '" + label + "'");
    }
    ds.examples.push_back(std::move(ex));
  }
  if (ds.examples.empty()) throw input_error(path + ": no examples");
  return ds;
}

void save_tsv(const Dataset& ds, const std::string& path) {
  TokenPool pool = token_pool(ds.vocab);
  std::unordered_map<int, const std::string*> word_of;
  for (std::size_t i = 0; i < pool.ids.size(); ++i) word_of[pool.ids[i]] = &pool.words[i];
  std::ofstream out(path);
  if (!out) throw io_error("cannot write data file '" + path + "'");
  for (const Example& ex : ds.examples) {
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      auto it = word_of.find(ex.tokens[i]);
      if (it == word_of.end()) {
        throw input_error("dataset token " + std::to_string(ex.tokens[i]) +
                          " has no word form; only generated datasets can be exported");
      }
      out << (i ? " " : "") << *it->second;
    }
    if (ds.task == TaskKind::classification) {
      out << '\t' << ex.label << '\n';
    } else {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", ex.target);
      out << '\t' << buf << '\n';
    }
  }
}

Dataset concat_datasets(const std::vector<const Dataset*>& parts) {
  if (parts.empty()) throw input_error("concat_datasets: no parts");
  Dataset out = *parts.front();
  out.examples.clear();
  for (const Dataset* p : parts) {
    out.examples.insert(out.examples.end(), p->examples.begin(), p->examples.end());
  }
  return out;
}

Dataset sample_fraction(const Dataset& ds, double fraction, Rng& rng) {
  if (fraction < 0.0 || fraction > 1.0) throw config_error("sample fraction must be in [0,1]");
  const std::size_t n =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  std::vector<int> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  shuffle_in_place(order, rng);
  Dataset out = ds;
  out.examples.clear();
  for (std::size_t i = 0; i < n; ++i) out.examples.push_back(ds.examples[order[i]]);
  return out;
}

}  // namespace bhpeft
