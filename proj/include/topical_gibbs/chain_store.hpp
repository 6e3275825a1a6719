#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "error.hpp"
#include "sampler.hpp"

namespace topical_gibbs {

// Chain archive layout: `manifest.json` plus one `<parameter>.bin` per
// parameter. Each .bin file starts with the 8 magic bytes "TGCHAIN1" and then
// holds records of: u64 value count, u64 iteration, value count float64
// values (matrices row-major). All integers and floats are little-endian.
inline constexpr std::array<char, 8> kChainMagic{'T', 'G', 'C', 'H', 'A', 'I', 'N', '1'};
inline constexpr int kChainFormatVersion = 1;

struct ParamSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::function<Eigen::MatrixXd(const ChainRecord&)> get;
  std::function<void(ChainRecord&, const Eigen::MatrixXd&)> set;
};

inline std::vector<ParamSpec> chain_parameters(const nlohmann::ordered_json& manifest) {
  const auto& d = manifest.at("dims");
  const int n = d.at("N"), k = d.at("K"), j0 = d.at("J0"), s = d.at("S"), p = d.at("P"), l = d.at("L");
  using M = Eigen::MatrixXd;
  std::vector<ParamSpec> specs{
      {"alpha", k, 1, [](const ChainRecord& r) { return M(r.alpha); }, [](ChainRecord& r, const M& m) { r.alpha = m; }},
      {"beta0_scaled", j0, k, [](const ChainRecord& r) { return r.beta0_scaled; },
       [](ChainRecord& r, const M& m) { r.beta0_scaled = m; }},
      {"theta_scaled", s, k, [](const ChainRecord& r) { return r.theta_scaled; },
       [](ChainRecord& r, const M& m) { r.theta_scaled = m; }},
      {"Wtilde", s, p, [](const ChainRecord& r) { return r.Wtilde; }, [](ChainRecord& r, const M& m) { r.Wtilde = m; }},
      {"lambda_sq", 1, 1, [](const ChainRecord& r) { return M::Constant(1, 1, r.lambda_sq); },
       [](ChainRecord& r, const M& m) { r.lambda_sq = m(0, 0); }},
      {"tau_sq", l, 1, [](const ChainRecord& r) { return M(r.tau_sq); }, [](ChainRecord& r, const M& m) { r.tau_sq = m; }},
      {"sigma_obs", j0, 1, [](const ChainRecord& r) { return M(r.sigma_obs); },
       [](ChainRecord& r, const M& m) { r.sigma_obs = m; }},
      {"sigma_topic", s, 1, [](const ChainRecord& r) { return M(r.sigma_topic); },
       [](ChainRecord& r, const M& m) { r.sigma_topic = m; }},
      {"acceptance", 1, 1, [](const ChainRecord& r) { return M::Constant(1, 1, r.acceptance); },
       [](ChainRecord& r, const M& m) { r.acceptance = m(0, 0); }},
  };
  if (manifest.value("stores_exposures", false))
    specs.push_back({"exposures", n, s, [](const ChainRecord& r) { return r.exposures; },
                     [](ChainRecord& r, const M& m) { r.exposures = m; }});
  return specs;
}

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(sizeof(T) == 8);
  std::uint64_t bits;
  std::memcpy(&bits, &value, 8);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

template <typename T>
bool get_le(std::istream& in, T& value) {
  static_assert(sizeof(T) == 8);
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) return false;
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  std::memcpy(&value, &bits, 8);
  return true;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline nlohmann::ordered_json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace detail

// Append-only writer. Creating a writer for a fresh directory writes the
// manifest and empty parameter files; `append` reopens an existing archive.
class ChainWriter {
 public:
  ChainWriter(const std::filesystem::path& dir, const nlohmann::ordered_json& manifest, bool append = false)
      : dir_(dir), specs_(chain_parameters(manifest)) {
    std::filesystem::create_directories(dir_);
    if (!append) {
      detail::write_json_file(dir_ / "manifest.json", manifest);
      for (const auto& spec : specs_) {
        std::ofstream out(file(spec), std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + file(spec).string());
        out.write(kChainMagic.data(), kChainMagic.size());
      }
    }
  }

  void append(const ChainRecord& r) {
    for (const auto& spec : specs_) {
      const Eigen::MatrixXd m = spec.get(r);
      if (m.rows() != spec.rows || m.cols() != spec.cols)
        throw DomainError("chain record parameter " + spec.name + " has the wrong shape");
      std::ofstream out(file(spec), std::ios::binary | std::ios::app);
      if (!out) throw DataError("cannot append to " + file(spec).string());
      detail::put_le(out, static_cast<std::uint64_t>(m.size()));
      detail::put_le(out, r.iteration);
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) detail::put_le(out, m(i, j));
    }
  }

 private:
  std::filesystem::path file(const ParamSpec& spec) const { return dir_ / (spec.name + ".bin"); }

  std::filesystem::path dir_;
  std::vector<ParamSpec> specs_;
};

inline ChainStore read_archive(const std::filesystem::path& dir) {
  ChainStore store;
  store.manifest = detail::read_json_file(dir / "manifest.json");
  if (store.manifest.value("format", "") != "topical-gibbs-chain")
    throw DataError(dir.string() + " is not a topical-gibbs chain archive");
  if (store.manifest.value("format_version", 0) != kChainFormatVersion)
    throw DataError("unsupported chain format version in " + dir.string());
  const auto specs = chain_parameters(store.manifest);
  for (std::size_t si = 0; si < specs.size(); ++si) {
    const auto& spec = specs[si];
    const auto path = dir / (spec.name + ".bin");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing chain file " + path.string());
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kChainMagic) throw DataError("bad magic in " + path.string());
    std::size_t idx = 0;
    for (;;) {
      std::uint64_t len = 0, iter = 0;
      if (!detail::get_le(in, len)) break;
      if (!detail::get_le(in, iter)) throw DataError("truncated record in " + path.string());
      if (len != static_cast<std::uint64_t>(spec.rows) * spec.cols)
        throw DataError("record length mismatch in " + path.string());
      Eigen::MatrixXd m(spec.rows, spec.cols);
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          if (!detail::get_le(in, m(i, j))) throw DataError("truncated record in " + path.string());
      if (si == 0) {
        store.records.emplace_back();
        store.records.back().iteration = iter;
      }
      if (idx >= store.records.size() || store.records[idx].iteration != iter)
        throw DataError("parameter files disagree on record iterations in " + dir.string());
      spec.set(store.records[idx], m);
      ++idx;
    }
    if (idx != store.records.size()) throw DataError("parameter files disagree on record counts in " + dir.string());
  }
  return store;
}

inline void write_archive(const std::filesystem::path& dir, const ChainStore& store) {
  ChainWriter w(dir, store.manifest);
  for (const auto& r : store.records) w.append(r);
}

// One CSV per parameter: iteration followed by the row-major entries.
inline void export_csv(const ChainStore& store, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& spec : chain_parameters(store.manifest)) {
    std::ofstream out(out_dir / (spec.name + ".csv"), std::ios::binary);
    if (!out) throw DataError("cannot write " + (out_dir / (spec.name + ".csv")).string());
    out << "iteration";
    for (int i = 0; i < spec.rows; ++i)
      for (int j = 0; j < spec.cols; ++j) out << ',' << spec.name << '[' << i << ',' << j << ']';
    out << '\n';
    out.precision(17);
    for (const auto& r : store.records) {
      const Eigen::MatrixXd m = spec.get(r);
      out << r.iteration;
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << m(i, j);
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints. Every stream is derived from (seed, iteration), so the sampler
// state and the next iteration index are enough to resume bit-identically.

namespace detail {

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline Eigen::MatrixXd json_matrix(const nlohmann::json& j) {
  Eigen::MatrixXd m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(i, c) = j.at("data").at(i).at(c).get<double>();
  return m;
}

}  // namespace detail

struct Checkpoint {
  std::uint64_t next_iteration = 1;
  std::uint64_t seed = 0;
  std::string data_digest;
  TopicState topic;
  LogisticState logistic;
  double acceptance = 1.0;
};

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  nlohmann::ordered_json j;
  j["next_iteration"] = c.next_iteration;
  j["seed"] = c.seed;
  j["data_digest"] = c.data_digest;
  j["acceptance"] = c.acceptance;
  j["Htilde"] = detail::matrix_json(c.topic.Htilde);
  j["Wtilde"] = detail::matrix_json(c.topic.Wtilde);
  j["sigma_topic"] = detail::matrix_json(c.topic.sigma_topic);
  j["alpha"] = detail::matrix_json(c.logistic.alpha);
  j["beta0_scaled"] = detail::matrix_json(c.logistic.beta0_scaled);
  j["theta_scaled"] = detail::matrix_json(c.logistic.theta_scaled);
  j["tau_sq"] = detail::matrix_json(c.logistic.tau_sq);
  j["lambda_sq"] = c.logistic.lambda_sq;
  j["sigma_obs"] = detail::matrix_json(c.logistic.sigma_obs);
  detail::write_json_file(path, j);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto j = detail::read_json_file(path);
  Checkpoint c;
  try {
    c.next_iteration = j.at("next_iteration");
    c.seed = j.at("seed");
    c.data_digest = j.at("data_digest");
    c.acceptance = j.at("acceptance");
    c.topic = make_topic_state(detail::json_matrix(j.at("Htilde")), detail::json_matrix(j.at("Wtilde")));
    c.topic.sigma_topic = detail::json_matrix(j.at("sigma_topic"));
    c.logistic.alpha = detail::json_matrix(j.at("alpha"));
    c.logistic.beta0_scaled = detail::json_matrix(j.at("beta0_scaled"));
    c.logistic.theta_scaled = detail::json_matrix(j.at("theta_scaled"));
    c.logistic.tau_sq = detail::json_matrix(j.at("tau_sq"));
    c.logistic.lambda_sq = j.at("lambda_sq");
    c.logistic.sigma_obs = detail::json_matrix(j.at("sigma_obs"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return c;
}

}  // namespace topical_gibbs
