#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bhpeft/rng.hpp"

namespace bhpeft {

enum class TaskKind { classification, regression };

TaskKind parse_task(const std::string& name);  // "classification" | "regression"
std::string task_name(TaskKind task);

struct Example {
  std::vector<int> tokens;
  int label = 0;       // classification target
  double target = 0.0; // regression target
};

/// Immutable labeled dataset of token-id sequences.
struct Dataset {
  TaskKind task = TaskKind::classification;
  int classes = 2;
  std::size_t vocab = 512;
  std::vector<Example> examples;
  std::string generator;  // provenance: generator name or "tsv"
  std::uint64_t seed = 0;

  std::size_t size() const { return examples.size(); }
};

enum class GenTask { keyword, noisy_region, phase_shift, regression_count };

GenTask parse_gen_task(const std::string& name);
std::string gen_task_name(GenTask task);

struct GenParams {
  std::size_t vocab = 512;
  std::size_t n_max = 32;
  std::size_t distinct_tokens = 16;  // pool entries in use: keyword, marker, distractors
  double ambig_fraction = 0.25;  // noisy-region: share of examples in the ambiguous region
  int phase = 1;                 // phase-shift: which keyword is active (1 or 2)
};

/// Deterministic synthetic task generators.
///   keyword          - label 1 iff a designated token appears (separable)
///   noisy-region     - keyword task; examples carrying an ambiguous marker
///                      token get their label flipped at rate 1/2
///   phase-shift      - keyword task whose designated token depends on phase
///   regression-count - target = count(designated token) / length, in [0,1]
/// Classes are balanced by construction.
Dataset generate(GenTask task, std::size_t n, std::uint64_t seed, const GenParams& params = {});

/// Generates n_train + n_eval examples and splits them; the two halves are
/// disjoint and both deterministic in the seed.
std::pair<Dataset, Dataset> train_eval_split(GenTask task, std::size_t n_train, std::size_t n_eval,
                                             std::uint64_t seed, const GenParams& params = {});

/// Reads a TSV file, one record per line: `text<TAB>label`. Text is
/// lowercased, split on whitespace, and every token is hashed into
/// [0, vocab) with FNV-1a 64. Sequences are truncated to n_max.
Dataset load_text(const std::string& path, TaskKind task, int classes, std::size_t vocab,
                  std::size_t n_max);

/// Writes a generated dataset as TSV using its stable token words; loading
/// the file back with load_text reproduces the dataset exactly.
void save_tsv(const Dataset& ds, const std::string& path);

/// Concatenation in argument order, then example order.
Dataset concat_datasets(const std::vector<const Dataset*>& parts);

/// Uniform sample (without replacement) of round(fraction * size) examples.
Dataset sample_fraction(const Dataset& ds, double fraction, Rng& rng);

/// FNV-1a 64-bit hash; the published token-hashing function.
std::uint64_t fnv1a64(std::string_view s);

/// Token vocabulary used by the generators. Every word's id equals
/// fnv1a64(word) % vocab and ids are pairwise distinct, so a TSV round trip
/// through load_text maps each word back to the id the generator used.
struct TokenPool {
  std::vector<std::string> words;
  std::vector<int> ids;  // parallel to words
};

TokenPool token_pool(std::size_t vocab);

}  // namespace bhpeft
