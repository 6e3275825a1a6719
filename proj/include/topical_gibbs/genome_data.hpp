#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "distributions.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace topical_gibbs {

// Sparse binary tumor x variant matrix in CSR form with burdens and labels.
// Column indices within a row are sorted and unique.
struct VariantDataset {
  int n_tumors = 0;
  int n_variants = 0;
  int n_classes = 0;
  std::vector<std::int64_t> row_ptr{0};
  std::vector<int> col_idx;
  std::vector<int> burden;
  std::vector<int> labels;  // 0-based class index
  std::vector<std::string> tumor_ids;
  std::vector<std::string> variant_ids;
  std::vector<std::string> class_names;
  int dropped_zero_burden = 0;

  std::span<const int> row(int n) const {
    return {col_idx.data() + row_ptr[n], static_cast<std::size_t>(row_ptr[n + 1] - row_ptr[n])};
  }

  std::int64_t nnz() const { return static_cast<std::int64_t>(col_idx.size()); }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n_tumors, n_variants);
    for (int n = 0; n < n_tumors; ++n)
      for (int j : row(n)) x(n, j) = 1.0;
    return x;
  }

  void validate() const {
    if (static_cast<int>(row_ptr.size()) != n_tumors + 1 || static_cast<int>(burden.size()) != n_tumors ||
        static_cast<int>(labels.size()) != n_tumors) {
      throw DataError("VariantDataset: inconsistent sizes");
    }
    for (int n = 0; n < n_tumors; ++n) {
      const auto r = row(n);
      if (r.empty()) throw DataError("VariantDataset: tumor " + tumor_ids[n] + " has zero burden");
      if (static_cast<int>(r.size()) != burden[n]) throw DataError("VariantDataset: burden mismatch");
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (r[i] < 0 || r[i] >= n_variants) throw DataError("VariantDataset: variant index out of range");
        if (i > 0 && r[i] <= r[i - 1]) throw DataError("VariantDataset: unsorted or duplicate coordinates");
      }
      if (n_classes > 0 && (labels[n] < 0 || labels[n] >= n_classes))
        throw DataError("VariantDataset: label out of range");
    }
  }

  // Subset of tumors (in the given order), keeping the variant universe.
  VariantDataset subset(std::span<const int> tumors) const {
    VariantDataset out;
    out.n_tumors = static_cast<int>(tumors.size());
    out.n_variants = n_variants;
    out.n_classes = n_classes;
    out.variant_ids = variant_ids;
    out.class_names = class_names;
    for (int n : tumors) {
      const auto r = row(n);
      out.col_idx.insert(out.col_idx.end(), r.begin(), r.end());
      out.row_ptr.push_back(static_cast<std::int64_t>(out.col_idx.size()));
      out.burden.push_back(burden[n]);
      out.labels.push_back(labels[n]);
      out.tumor_ids.push_back(tumor_ids[n]);
    }
    return out;
  }
};

// Variant -> category assignment for one meta-feature source.
struct MetaMap {
  std::string source;
  std::vector<std::string> categories;  // order of first appearance
  std::unordered_map<std::string, int> category_of_variant;
};

// Meta-design for one categorical source: U (J x P, one 1 per row), the
// count matrix V = XU and the burden-normalized views.
struct MetaDesign {
  int n_categories = 0;
  std::string source;
  std::vector<std::string> category_names;
  std::vector<int> category_of;  // size J
  Eigen::SparseMatrix<int, Eigen::RowMajor> U;
  Eigen::MatrixXi V;
  Eigen::SparseMatrix<double, Eigen::RowMajor> Xnorm;
  Eigen::MatrixXd Vnorm;
};

struct ScreenReport {
  std::vector<int> kept;          // descending score, ties by ascending index
  std::vector<double> mi_scores;  // one per variant
  int threshold_rank = 0;         // number of kept variants
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file: " + path.string());
  return in;
}

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace detail

// Reads `tumor_id<TAB>class_name` lines plus an optional `#classes=a,b,...`
// header fixing the class order, and `tumor_id<TAB>variant_id` lines with an
// optional `#tumors=<N> variants=<J>` header. Tumors without any variant are
// dropped and counted in `dropped_zero_burden`. With an empty label path the
// tumors are taken from the variant file in order of first appearance and
// left unlabeled (label -1, no classes).
inline VariantDataset load_dataset(const std::filesystem::path& variant_file,
                                   const std::filesystem::path& label_file) {
  VariantDataset ds;
  std::vector<std::string> all_tumors;
  std::vector<int> all_labels;
  std::unordered_map<std::string, int> tumor_index;
  std::unordered_map<std::string, int> class_index;
  bool fixed_classes = false;
  const bool unlabeled = label_file.empty();
  if (!unlabeled) {
    auto in = detail::open_input(label_file);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
      ++lineno;
      const auto line = detail::strip_cr(raw);
      if (line.empty()) continue;
      if (line.front() == '#') {
        constexpr std::string_view kKey = "#classes=";
        if (line.starts_with(kKey)) {
          if (fixed_classes || !all_tumors.empty())
            throw ParseError(label_file.string(), lineno, "class header must come first");
          std::string_view rest = line.substr(kKey.size());
          std::size_t start = 0;
          while (start <= rest.size()) {
            const auto comma = rest.find(',', start);
            const auto name = rest.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
            if (name.empty()) throw ParseError(label_file.string(), lineno, "empty class name in header");
            if (!class_index.emplace(std::string(name), static_cast<int>(ds.class_names.size())).second)
              throw ParseError(label_file.string(), lineno, "duplicate class name in header: " + std::string(name));
            ds.class_names.emplace_back(name);
            if (comma == std::string_view::npos) break;
            start = comma + 1;
          }
          fixed_classes = true;
        }
        continue;
      }
      const auto fields = detail::split_tabs(line);
      if (fields.size() != 2 || fields[0].empty() || fields[1].empty())
        throw ParseError(label_file.string(), lineno, "expected tumor_id<TAB>class_name");
      std::string tumor(fields[0]);
      std::string cls(fields[1]);
      auto it = class_index.find(cls);
      if (it == class_index.end()) {
        if (fixed_classes) throw ParseError(label_file.string(), lineno, "unknown class label: " + cls);
        it = class_index.emplace(cls, static_cast<int>(ds.class_names.size())).first;
        ds.class_names.push_back(cls);
      }
      if (!tumor_index.emplace(tumor, static_cast<int>(all_tumors.size())).second)
        throw ParseError(label_file.string(), lineno, "duplicate tumor id: " + tumor);
      all_tumors.push_back(std::move(tumor));
      all_labels.push_back(it->second);
    }
  }
  if (!unlabeled && all_tumors.empty()) throw DataError("label file has no tumors: " + label_file.string());

  std::vector<std::vector<std::string>> variants_of(all_tumors.size());
  std::set<std::string> variant_set;
  {
    auto in = detail::open_input(variant_file);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
      ++lineno;
      const auto line = detail::strip_cr(raw);
      if (line.empty()) continue;
      if (line.front() == '#') {
        if (line.starts_with("#tumors=")) {
          std::istringstream hs{std::string(line)};
          std::string a, b;
          hs >> a >> b;
          long n = -1, j = -1;
          if (std::sscanf(a.c_str(), "#tumors=%ld", &n) != 1 || std::sscanf(b.c_str(), "variants=%ld", &j) != 1 ||
              n < 0 || j < 0)
            throw ParseError(variant_file.string(), lineno, "malformed header, expected #tumors=<N> variants=<J>");
        }
        continue;
      }
      const auto fields = detail::split_tabs(line);
      if (fields.size() != 2 || fields[0].empty() || fields[1].empty())
        throw ParseError(variant_file.string(), lineno, "expected tumor_id<TAB>variant_id");
      auto it = tumor_index.find(std::string(fields[0]));
      if (it == tumor_index.end()) {
        if (!unlabeled)
          throw ParseError(variant_file.string(), lineno, "tumor without a label: " + std::string(fields[0]));
        it = tumor_index.emplace(std::string(fields[0]), static_cast<int>(all_tumors.size())).first;
        all_tumors.emplace_back(fields[0]);
        all_labels.push_back(-1);
        variants_of.emplace_back();
      }
      variants_of[it->second].emplace_back(fields[1]);
      variant_set.emplace(fields[1]);
    }
  }

  ds.variant_ids.assign(variant_set.begin(), variant_set.end());
  std::unordered_map<std::string, int> variant_index;
  for (std::size_t j = 0; j < ds.variant_ids.size(); ++j) variant_index.emplace(ds.variant_ids[j], static_cast<int>(j));
  ds.n_variants = static_cast<int>(ds.variant_ids.size());
  ds.n_classes = static_cast<int>(ds.class_names.size());

  for (std::size_t t = 0; t < all_tumors.size(); ++t) {
    std::vector<int> cols;
    cols.reserve(variants_of[t].size());
    for (const auto& v : variants_of[t]) cols.push_back(variant_index.at(v));
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    if (cols.empty()) {
      ++ds.dropped_zero_burden;
      continue;
    }
    ds.col_idx.insert(ds.col_idx.end(), cols.begin(), cols.end());
    ds.row_ptr.push_back(static_cast<std::int64_t>(ds.col_idx.size()));
    ds.burden.push_back(static_cast<int>(cols.size()));
    ds.labels.push_back(all_labels[t]);
    ds.tumor_ids.push_back(all_tumors[t]);
  }
  ds.n_tumors = static_cast<int>(ds.tumor_ids.size());
  if (unlabeled && ds.n_tumors == 0) throw DataError("variant file has no tumors: " + variant_file.string());
  ds.validate();
  return ds;
}

// Reads `variant_id<TAB>source_name<TAB>category_name`. An empty `source`
// selects the first source in the file. A variant mapped to two different
// categories of the selected source violates one-hot coding.
inline MetaMap load_meta_map(const std::filesystem::path& map_file, const std::string& source = {}) {
  MetaMap map;
  map.source = source;
  std::unordered_map<std::string, int> category_index;
  auto in = detail::open_input(map_file);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = detail::strip_cr(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty())
      throw ParseError(map_file.string(), lineno, "expected variant_id<TAB>source<TAB>category");
    if (map.source.empty()) map.source = std::string(fields[1]);
    if (fields[1] != map.source) continue;
    std::string cat(fields[2]);
    auto cit = category_index.find(cat);
    if (cit == category_index.end()) {
      cit = category_index.emplace(cat, static_cast<int>(map.categories.size())).first;
      map.categories.push_back(cat);
    }
    auto [vit, inserted] = map.category_of_variant.emplace(std::string(fields[0]), cit->second);
    if (!inserted && vit->second != cit->second)
      throw ParseError(map_file.string(), lineno,
                       "variant " + std::string(fields[0]) + " has two categories in source " + map.source);
  }
  if (map.categories.empty()) throw DataError("map file has no entries for source '" + map.source + "'");
  return map;
}

inline std::string format_missing(const std::vector<std::string>& missing) {
  std::string msg;
  for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += (i ? ", " : "") + missing[i];
  if (missing.size() > 10) msg += ", ... (" + std::to_string(missing.size()) + " total)";
  return msg;
}

// Builds U, V = XU, Xnorm and Vnorm from a category assignment per variant.
inline MetaDesign build_meta_design(const VariantDataset& ds, std::vector<int> category_of,
                                    std::vector<std::string> category_names, std::string source = "") {
  MetaDesign md;
  md.source = std::move(source);
  md.n_categories = static_cast<int>(category_names.size());
  md.category_names = std::move(category_names);
  md.category_of = std::move(category_of);
  const int n = ds.n_tumors, j = ds.n_variants, p = md.n_categories;
  if (static_cast<int>(md.category_of.size()) != j) throw DataError("category assignment size mismatch");

  std::vector<Eigen::Triplet<int>> ut;
  ut.reserve(j);
  for (int v = 0; v < j; ++v) {
    if (md.category_of[v] < 0 || md.category_of[v] >= p) throw DataError("category index out of range");
    ut.emplace_back(v, md.category_of[v], 1);
  }
  md.U.resize(j, p);
  md.U.setFromTriplets(ut.begin(), ut.end());

  md.V = Eigen::MatrixXi::Zero(n, p);
  std::vector<Eigen::Triplet<double>> xt;
  xt.reserve(ds.col_idx.size());
  for (int t = 0; t < n; ++t) {
    const double inv_m = 1.0 / ds.burden[t];
    for (int v : ds.row(t)) {
      md.V(t, md.category_of[v]) += 1;
      xt.emplace_back(t, v, inv_m);
    }
  }
  md.Xnorm.resize(n, j);
  md.Xnorm.setFromTriplets(xt.begin(), xt.end());
  md.Vnorm = md.V.cast<double>();
  for (int t = 0; t < n; ++t) md.Vnorm.row(t) /= static_cast<double>(ds.burden[t]);
  return md;
}

inline MetaDesign build_meta_design(const VariantDataset& ds, const MetaMap& map) {
  std::vector<int> category_of(ds.n_variants, -1);
  std::vector<std::string> missing;
  for (int v = 0; v < ds.n_variants; ++v) {
    const auto it = map.category_of_variant.find(ds.variant_ids[v]);
    if (it == map.category_of_variant.end()) {
      missing.push_back(ds.variant_ids[v]);
    } else {
      category_of[v] = it->second;
    }
  }
  if (!missing.empty())
    throw DataError("variants missing from map (source " + map.source + "): " + format_missing(missing));
  return build_meta_design(ds, std::move(category_of), map.categories, map.source);
}

inline MetaDesign build_meta_design(const VariantDataset& ds, const std::filesystem::path& map_file,
                                    const std::string& source = {}) {
  return build_meta_design(ds, load_meta_map(map_file, source));
}

// Plug-in mutual information (natural log) between each binary variant
// indicator and the class label; the top `cap` variants are kept.
inline ScreenReport screen_variants(const VariantDataset& ds, int cap) {
  if (cap < 0) throw DomainError("screen_variants: cap must be non-negative");
  const int n = ds.n_tumors, k = ds.n_classes, j = ds.n_variants;
  std::vector<double> class_count(k, 0.0);
  for (int label : ds.labels) class_count[label] += 1.0;
  // present[v * k + c] = number of class-c tumors carrying variant v
  std::vector<double> present(static_cast<std::size_t>(j) * k, 0.0);
  for (int t = 0; t < n; ++t)
    for (int v : ds.row(t)) present[static_cast<std::size_t>(v) * k + ds.labels[t]] += 1.0;

  ScreenReport report;
  report.mi_scores.assign(j, 0.0);
  const double total = n;
  for (int v = 0; v < j; ++v) {
    double ones = 0.0;
    for (int c = 0; c < k; ++c) ones += present[static_cast<std::size_t>(v) * k + c];
    const double p1 = ones / total, p0 = 1.0 - p1;
    double mi = 0.0;
    for (int c = 0; c < k; ++c) {
      const double pc = class_count[c] / total;
      const double j1 = present[static_cast<std::size_t>(v) * k + c] / total;
      const double j0 = (class_count[c] - present[static_cast<std::size_t>(v) * k + c]) / total;
      if (j1 > 0.0) mi += j1 * std::log(j1 / (p1 * pc));
      if (j0 > 0.0) mi += j0 * std::log(j0 / (p0 * pc));
    }
    report.mi_scores[v] = std::max(0.0, mi);
  }
  std::vector<int> order(j);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return report.mi_scores[a] > report.mi_scores[b]; });
  const int keep = std::min(cap, j);
  report.kept.assign(order.begin(), order.begin() + keep);
  report.threshold_rank = keep;
  return report;
}

// ---------------------------------------------------------------------------
// Synthetic data from the generative model.

struct SimConfig {
  int n_tumors = 500;
  int n_classes = 3;
  int n_topics = 3;
  int n_categories = 30;
  int variants_per_category = 200;
  int burden_min = 50;
  int burden_max = 150;
  double separation = 10.0;  // scale of the true topic coefficients
  double a_H = 1.0;          // exposure Dirichlet concentration
  double a_W = 0.5;          // topic Dirichlet concentration
  double min_topic_tv = 0.0; // reject topic draws closer than this
  double alpha_scale = 0.0;
  int n_hotspots = 0;        // variants with residual class effects
  double hotspot_rate = 0.1;
  double hotspot_effect = 0.0;
};

struct SimTruth {
  Eigen::MatrixXd W;         // S x P, rows on the simplex
  Eigen::MatrixXd exposures; // N x S
  Eigen::MatrixXd theta;     // S x K
  Eigen::MatrixXd beta0;     // J x K (zero except hotspots)
  Eigen::VectorXd alpha;     // K
};

struct SimulatedData {
  VariantDataset dataset;
  MetaDesign design;
  MetaMap map;  // covers every variant of the universe, seen or not
  SimTruth truth;
};

inline double total_variation(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  return 0.5 * (a - b).cwiseAbs().sum();
}

// Right pseudo-inverse W^T (W W^T)^{-1} of a full-row-rank S x P matrix.
inline Eigen::MatrixXd right_pseudo_inverse(const Eigen::MatrixXd& w) {
  const Eigen::MatrixXd gram = w * w.transpose();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  return w.transpose() * ldlt.solve(Eigen::MatrixXd::Identity(w.rows(), w.rows()));
}

inline std::string padded(const std::string& prefix, long value, int width) {
  std::ostringstream os;
  os << prefix << std::setw(width) << std::setfill('0') << value;
  return os.str();
}

inline SimulatedData simulate_dataset(const SimConfig& cfg, RngStream& rng) {
  const int n = cfg.n_tumors, k = cfg.n_classes, s = cfg.n_topics, p = cfg.n_categories;
  if (n < 1 || k < 2 || s < 1 || p < 1) throw ConfigError("simulate: need N >= 1, K >= 2, S >= 1, P >= 1");
  if (s >= p) throw ConfigError("simulate: number of topics S must be smaller than categories P");
  if (cfg.burden_min < 1 || cfg.burden_max < cfg.burden_min)
    throw ConfigError("simulate: invalid burden range");
  if (cfg.burden_max > cfg.variants_per_category)
    throw ConfigError("simulate: burden_max must not exceed variants_per_category");
  if (cfg.n_hotspots < 0 || cfg.n_hotspots > p * cfg.variants_per_category)
    throw ConfigError("simulate: invalid hotspot count");

  SimulatedData out;
  SimTruth& truth = out.truth;
  const Eigen::VectorXd w_conc = Eigen::VectorXd::Constant(p, cfg.a_W);
  truth.W.resize(s, p);
  bool separated = false;
  for (int attempt = 0; attempt < 10000 && !separated; ++attempt) {
    for (int t = 0; t < s; ++t) truth.W.row(t) = sample_dirichlet(w_conc, rng).transpose();
    separated = true;
    for (int a = 0; a < s && separated; ++a)
      for (int b = a + 1; b < s && separated; ++b)
        if (total_variation(truth.W.row(a).transpose(), truth.W.row(b).transpose()) < cfg.min_topic_tv) separated = false;
  }
  if (!separated) throw ConfigError("simulate: could not draw topics with the requested TV separation");

  truth.theta.resize(s, k);
  for (int t = 0; t < s; ++t)
    for (int c = 0; c < k; ++c) truth.theta(t, c) = cfg.separation * ((t % k == c ? 1.0 : 0.0) - 1.0 / k);
  truth.alpha.resize(k);
  for (int c = 0; c < k; ++c) truth.alpha(c) = cfg.alpha_scale * rng.normal();
  truth.alpha.array() -= truth.alpha.mean();

  const int vpc = cfg.variants_per_category;
  const int j_all = p * vpc;
  const Eigen::VectorXd h_conc = Eigen::VectorXd::Constant(s, cfg.a_H);
  truth.exposures.resize(n, s);
  std::vector<std::vector<int>> rows(n);
  std::vector<int> scratch(vpc);
  for (int t = 0; t < n; ++t) {
    truth.exposures.row(t) = sample_dirichlet(h_conc, rng).transpose();
    const int burden = cfg.burden_min + static_cast<int>(rng.below(cfg.burden_max - cfg.burden_min + 1));
    Eigen::VectorXd probs = (truth.exposures.row(t) * truth.W).transpose();
    probs /= probs.sum();
    const auto counts = sample_multinomial(burden, std::span<const double>(probs.data(), probs.size()), rng);
    for (int c = 0; c < p; ++c) {
      // partial Fisher-Yates: `counts[c]` distinct variants of category c
      std::iota(scratch.begin(), scratch.end(), 0);
      for (int i = 0; i < counts[c]; ++i) {
        const int pick = i + static_cast<int>(rng.below(vpc - i));
        std::swap(scratch[i], scratch[pick]);
        rows[t].push_back(c * vpc + scratch[i]);
      }
    }
  }
  // Hotspot h is variant h * vpc' spread over categories; presence is random.
  std::vector<int> hotspot_variant(cfg.n_hotspots);
  for (int h = 0; h < cfg.n_hotspots; ++h) hotspot_variant[h] = (h % p) * vpc + h / p;
  for (int t = 0; t < n; ++t) {
    for (int h = 0; h < cfg.n_hotspots; ++h) {
      if (rng.uniform() < cfg.hotspot_rate) rows[t].push_back(hotspot_variant[h]);
    }
    std::sort(rows[t].begin(), rows[t].end());
    rows[t].erase(std::unique(rows[t].begin(), rows[t].end()), rows[t].end());
  }

  // Compact the universe to variants that occur at least once.
  std::vector<int> used(j_all, 0);
  for (const auto& r : rows)
    for (int v : r) used[v] = 1;
  std::vector<int> compact(j_all, -1);
  VariantDataset& ds = out.dataset;
  for (int v = 0; v < j_all; ++v) {
    if (!used[v]) continue;
    compact[v] = static_cast<int>(ds.variant_ids.size());
    ds.variant_ids.push_back(padded("v", v, 7));
  }
  ds.n_tumors = n;
  ds.n_variants = static_cast<int>(ds.variant_ids.size());
  ds.n_classes = k;
  for (int c = 0; c < k; ++c) ds.class_names.push_back(padded("class", c + 1, 2));
  for (int t = 0; t < n; ++t) {
    for (int v : rows[t]) ds.col_idx.push_back(compact[v]);
    ds.row_ptr.push_back(static_cast<std::int64_t>(ds.col_idx.size()));
    ds.burden.push_back(static_cast<int>(rows[t].size()));
    ds.tumor_ids.push_back(padded("T", t + 1, 6));
  }

  out.map.source = "category";
  for (int c = 0; c < p; ++c) out.map.categories.push_back(padded("cat", c + 1, 3));
  for (int v = 0; v < j_all; ++v) out.map.category_of_variant.emplace(padded("v", v, 7), v / vpc);
  std::vector<int> category_of(ds.n_variants);
  for (int v = 0; v < j_all; ++v)
    if (compact[v] >= 0) category_of[compact[v]] = v / vpc;

  truth.beta0 = Eigen::MatrixXd::Zero(ds.n_variants, k);
  for (int h = 0; h < cfg.n_hotspots; ++h) {
    const int v = compact[hotspot_variant[h]];
    if (v < 0) continue;
    for (int c = 0; c < k; ++c) truth.beta0(v, c) = cfg.hotspot_effect * ((h % k == c ? 1.0 : 0.0) - 1.0 / k);
  }

  ds.labels.assign(n, 0);
  out.design = build_meta_design(ds, category_of, out.map.categories, out.map.source);
  const Eigen::MatrixXd omega = right_pseudo_inverse(truth.W) * truth.theta;  // P x K
  const Eigen::MatrixXd eta_topic = out.design.Vnorm * omega;
  const Eigen::MatrixXd eta_resid = out.design.Xnorm * truth.beta0;
  std::vector<double> prob(k);
  for (int t = 0; t < n; ++t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      prob[c] = truth.alpha(c) + eta_topic(t, c) + eta_resid(t, c);
      mx = std::max(mx, prob[c]);
    }
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += (prob[c] = std::exp(prob[c] - mx));
    double u = rng.uniform() * z;
    int label = k - 1;
    for (int c = 0; c < k; ++c) {
      if (u < prob[c]) {
        label = c;
        break;
      }
      u -= prob[c];
    }
    ds.labels[t] = label;
  }
  ds.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Writers for the text interchange formats.

inline void write_variant_file(const VariantDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "#tumors=" << ds.n_tumors << " variants=" << ds.n_variants << '\n';
  for (int t = 0; t < ds.n_tumors; ++t)
    for (int v : ds.row(t)) out << ds.tumor_ids[t] << '\t' << ds.variant_ids[v] << '\n';
}

inline void write_label_file(const VariantDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "#classes=";
  for (int c = 0; c < ds.n_classes; ++c) out << (c ? "," : "") << ds.class_names[c];
  out << '\n';
  for (int t = 0; t < ds.n_tumors; ++t) out << ds.tumor_ids[t] << '\t' << ds.class_names[ds.labels[t]] << '\n';
}

inline void write_map_file(const MetaMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  std::vector<std::pair<std::string, int>> entries(map.category_of_variant.begin(), map.category_of_variant.end());
  std::sort(entries.begin(), entries.end());
  for (const auto& [variant, cat] : entries) out << variant << '\t' << map.source << '\t' << map.categories[cat] << '\n';
}

}  // namespace topical_gibbs
