#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "imglong/errors.hpp"
#include "imglong/image.hpp"
#include "imglong/nlme.hpp"
#include "imglong/rng.hpp"

namespace imglong::dataio {

inline constexpr const char* dataset_schema = "imglong-dataset/1";

// --- low-level file plumbing ---------------------------------------------

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw integrity_error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (!in.good() && !in.eof()) throw integrity_error("read failed for " + path.string());
    return buf.str();
}

inline std::uint64_t file_checksum(const std::filesystem::path& path) {
    return fnv1a64(read_file_bytes(path));
}

inline std::string checksum_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << h;
    return os.str();
}

// temp + rename so readers never observe a half-written file
inline void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("atomic_write: cannot open " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::filesystem::remove(tmp);
            throw std::runtime_error("atomic_write: write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

// --- PGM images -----------------------------------------------------------

inline std::string encode_pgm(const image& img) {
    img.validate();
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                      "\n255\n";
    out.reserve(out.size() + img.pixels.size());
    for (double p : img.pixels) {
        double v = std::floor(255.0 * p + 0.5);
        if (v < 0.0) v = 0.0;
        if (v > 255.0) v = 255.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    }
    return out;
}

inline void write_pgm(const std::filesystem::path& path, const image& img) {
    atomic_write(path, encode_pgm(img));
}

inline image decode_pgm(const std::string& bytes, const std::string& name) {
    std::istringstream in(bytes);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw integrity_error(name + ": not a binary PGM");
    auto next_int = [&](const char* what) {
        // skip whitespace and # comment lines
        int c = in.peek();
        while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
            if (c == '#') in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
            else in.get();
            c = in.peek();
        }
        long long v = -1;
        if (!(in >> v) || v < 0)
            throw integrity_error(name + ": bad " + what + " in PGM header");
        return v;
    };
    const long long w = next_int("width");
    const long long h = next_int("height");
    const long long maxval = next_int("maxval");
    if (maxval != 255) throw integrity_error(name + ": PGM maxval must be 255");
    in.get(); // single whitespace before raster

    const auto offset = static_cast<std::size_t>(in.tellg());
    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() - offset < need) throw integrity_error(name + ": truncated PGM raster");

    image img;
    img.height = static_cast<int>(h);
    img.width = static_cast<int>(w);
    img.pixels.resize(need);
    for (std::size_t i = 0; i < need; ++i)
        img.pixels[i] = static_cast<unsigned char>(bytes[offset + i]) / 255.0;
    return img;
}

inline image read_pgm(const std::filesystem::path& path) {
    return decode_pgm(read_file_bytes(path), path.string());
}

// --- splits ---------------------------------------------------------------

struct split_spec {
    double train = 0.8636;
    double val = 0.0455;
    double test = 0.0909;
    // exact-count mode overrides the fractions when enabled
    bool exact = false;
    long long n_train = 0;
    long long n_val = 0;
    long long n_test = 0;

    void validate(std::size_t n) const {
        if (exact) {
            if (n_train < 0 || n_val < 0 || n_test < 0)
                throw std::invalid_argument("split_spec: negative counts");
            if (static_cast<std::size_t>(n_train + n_val + n_test) != n)
                throw std::invalid_argument("split_spec: counts do not sum to id count");
            return;
        }
        if (!(train > 0.0) || !(val > 0.0) || !(test > 0.0))
            throw std::invalid_argument("split_spec: fractions must be positive");
        if (std::abs(train + val + test - 1.0) > 1e-9)
            throw std::invalid_argument("split_spec: fractions must sum to 1");
    }
};

struct split_result {
    std::vector<long long> train, val, test;
};

// seeded shuffle, val/test take their rounded shares, remainder goes to train
inline split_result split(std::vector<long long> ids, const split_spec& spec,
                          std::uint64_t seed) {
    if (ids.size() < 3) throw std::invalid_argument("split: need at least 3 ids");
    spec.validate(ids.size());

    rng256 gen(derive_seed(seed, "split", 0));
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(gen.next_u64() % (i + 1));
        std::swap(ids[i], ids[j]);
    }

    const auto n = static_cast<long long>(ids.size());
    long long n_val = 0, n_test = 0;
    if (spec.exact) {
        n_val = spec.n_val;
        n_test = spec.n_test;
    } else {
        n_val = std::llround(spec.val * static_cast<double>(n));
        n_test = std::llround(spec.test * static_cast<double>(n));
        if (n_val + n_test > n)
            throw std::invalid_argument("split: rounded val/test exceed id count");
    }
    const long long n_train = n - n_val - n_test;

    split_result out;
    out.train.assign(ids.begin(), ids.begin() + n_train);
    out.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
    out.test.assign(ids.begin() + n_train + n_val, ids.end());
    return out;
}

// --- manifest -------------------------------------------------------------

struct manifest_entry {
    std::string path; // relative to the dataset directory
    std::uint64_t bytes = 0;
    std::string fnv1a64_hex;
};

struct manifest {
    std::string schema = dataset_schema;
    std::uint64_t master_seed = 0;
    std::string config_digest;
    std::vector<double> levels;
    std::array<int, 3> eta_indices{};
    long long n_train = 0;
    long long n_val = 0;
    long long n_test = 0;
    std::vector<manifest_entry> inventory; // sorted by path

    long long total() const { return n_train + n_val + n_test; }
};

inline nlohmann::json manifest_to_json(const manifest& m) {
    nlohmann::json j;
    j["schema"] = m.schema;
    j["master_seed"] = m.master_seed;
    j["config_digest"] = m.config_digest;
    j["levels"] = m.levels;
    j["eta_indices"] = m.eta_indices;
    j["counts"] = {{"train", m.n_train}, {"val", m.n_val}, {"test", m.n_test},
                   {"total", m.total()}};
    j["inventory"] = nlohmann::json::array();
    for (const auto& e : m.inventory)
        j["inventory"].push_back(
            {{"path", e.path}, {"bytes", e.bytes}, {"fnv1a64", e.fnv1a64_hex}});
    return j;
}

inline manifest manifest_from_json(const nlohmann::json& j, const std::string& name) {
    manifest m;
    try {
        m.schema = j.at("schema").get<std::string>();
        if (m.schema != dataset_schema)
            throw version_error(name + ": unsupported schema '" + m.schema + "', expected '" +
                                dataset_schema + "'");
        m.master_seed = j.at("master_seed").get<std::uint64_t>();
        m.config_digest = j.at("config_digest").get<std::string>();
        m.levels = j.at("levels").get<std::vector<double>>();
        m.eta_indices = j.at("eta_indices").get<std::array<int, 3>>();
        m.n_train = j.at("counts").at("train").get<long long>();
        m.n_val = j.at("counts").at("val").get<long long>();
        m.n_test = j.at("counts").at("test").get<long long>();
        for (const auto& e : j.at("inventory")) {
            manifest_entry entry;
            entry.path = e.at("path").get<std::string>();
            entry.bytes = e.at("bytes").get<std::uint64_t>();
            entry.fnv1a64_hex = e.at("fnv1a64").get<std::string>();
            m.inventory.push_back(std::move(entry));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw integrity_error(name + ": malformed manifest: " + ex.what());
    }
    return m;
}

inline manifest read_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file_bytes(path));
    } catch (const nlohmann::json::exception& ex) {
        throw integrity_error(path.string() + ": not valid JSON: " + ex.what());
    }
    return manifest_from_json(j, path.string());
}

inline void verify_files(const manifest& m, const std::filesystem::path& dir) {
    for (const auto& e : m.inventory) {
        const auto path = dir / e.path;
        if (!std::filesystem::exists(path))
            throw integrity_error("missing dataset file " + e.path);
        const std::string bytes = read_file_bytes(path);
        if (bytes.size() != e.bytes || checksum_hex(fnv1a64(bytes)) != e.fnv1a64_hex)
            throw integrity_error("checksum mismatch for " + e.path);
    }
}

// --- dataset write --------------------------------------------------------

struct dataset_content {
    std::uint64_t master_seed = 0;
    std::string config_digest;
    std::array<int, 3> eta_indices{};
    std::vector<double> levels; // ascending

    std::vector<long long> ids;
    std::vector<std::vector<double>> latents;        // aligned with ids
    std::vector<image> images;                       // aligned with ids
    std::vector<std::array<double, 3>> eta;          // aligned with ids
    // outer index: level, inner: aligned with ids
    std::vector<std::vector<std::array<double, 3>>> eta_hat;
    std::vector<std::vector<nlme::observation_set>> observations;

    split_result splits;
};

namespace detail {

inline void validate_content(const dataset_content& c) {
    const std::size_t n = c.ids.size();
    if (c.latents.size() != n || c.images.size() != n || c.eta.size() != n)
        throw std::invalid_argument("write_dataset: per-subject arrays must align with ids");
    if (c.levels.empty()) throw std::invalid_argument("write_dataset: empty level set");
    for (std::size_t l = 1; l < c.levels.size(); ++l)
        if (!(c.levels[l] > c.levels[l - 1]))
            throw std::invalid_argument("write_dataset: levels must be ascending");
    if (c.eta_hat.size() != c.levels.size() || c.observations.size() != c.levels.size())
        throw std::invalid_argument("write_dataset: per-level arrays must align with levels");

    std::set<long long> seen;
    for (long long id : c.ids)
        if (!seen.insert(id).second)
            throw std::invalid_argument("write_dataset: duplicate subject id " +
                                        std::to_string(id));

    if (!c.latents.empty()) {
        const std::size_t d = c.latents.front().size();
        for (const auto& z : c.latents)
            if (z.size() != d)
                throw std::invalid_argument("write_dataset: inconsistent latent dimension");
    }

    for (std::size_t l = 0; l < c.levels.size(); ++l) {
        if (c.eta_hat[l].size() != n || c.observations[l].size() != n)
            throw std::invalid_argument("write_dataset: level arrays must align with ids");
        for (std::size_t i = 0; i < n; ++i) {
            const auto& obs = c.observations[l][i];
            if (obs.subject_id != c.ids[i])
                throw std::invalid_argument("write_dataset: observation subject id mismatch for " +
                                            std::to_string(c.ids[i]));
            if (obs.sigma2 != c.levels[l])
                throw std::invalid_argument("write_dataset: observation sigma2 mismatch for " +
                                            std::to_string(c.ids[i]));
            if (obs.times.size() != obs.y.size())
                throw std::invalid_argument("write_dataset: ragged observations for " +
                                            std::to_string(c.ids[i]));
        }
    }

    std::set<long long> split_ids;
    for (const auto* part : {&c.splits.train, &c.splits.val, &c.splits.test})
        for (long long id : *part)
            if (!split_ids.insert(id).second)
                throw std::invalid_argument("write_dataset: id in more than one split: " +
                                            std::to_string(id));
    if (split_ids != seen)
        throw std::invalid_argument("write_dataset: splits must cover exactly the subject ids");
}

} // namespace detail

inline manifest write_dataset(const dataset_content& c, const std::filesystem::path& dir) {
    detail::validate_content(c);
    std::filesystem::create_directories(dir / "images");
    // invalidate any previous commit before touching data files
    std::filesystem::remove(dir / "manifest.json");

    manifest m;
    m.master_seed = c.master_seed;
    m.config_digest = c.config_digest;
    m.levels = c.levels;
    m.eta_indices = c.eta_indices;
    m.n_train = static_cast<long long>(c.splits.train.size());
    m.n_val = static_cast<long long>(c.splits.val.size());
    m.n_test = static_cast<long long>(c.splits.test.size());

    auto emit = [&](const std::string& rel, const std::string& bytes) {
        atomic_write(dir / rel, bytes);
        m.inventory.push_back({rel, bytes.size(), checksum_hex(fnv1a64(bytes))});
    };

    const std::size_t n = c.ids.size();
    const std::size_t d = c.latents.empty() ? 0 : c.latents.front().size();

    std::ostringstream latents;
    latents << std::setprecision(17);
    latents << "id";
    for (std::size_t k = 0; k < d; ++k) latents << ",z" << k;
    latents << '\n';
    for (std::size_t i = 0; i < n; ++i) {
        latents << c.ids[i];
        for (double v : c.latents[i]) latents << ',' << v;
        latents << '\n';
    }
    emit("latents.csv", latents.str());

    std::ostringstream eta;
    eta << std::setprecision(17) << "id,eta1,eta2,eta3\n";
    for (std::size_t i = 0; i < n; ++i)
        eta << c.ids[i] << ',' << c.eta[i][0] << ',' << c.eta[i][1] << ',' << c.eta[i][2]
            << '\n';
    emit("eta.csv", eta.str());

    std::ostringstream hat;
    hat << std::setprecision(17) << "id,sigma2,eta_hat1,eta_hat2,eta_hat3\n";
    for (std::size_t l = 0; l < c.levels.size(); ++l)
        for (std::size_t i = 0; i < n; ++i)
            hat << c.ids[i] << ',' << c.levels[l] << ',' << c.eta_hat[l][i][0] << ','
                << c.eta_hat[l][i][1] << ',' << c.eta_hat[l][i][2] << '\n';
    emit("eta_hat.csv", hat.str());

    std::ostringstream lon;
    lon << std::setprecision(17) << "id,sigma2,time,y\n";
    for (std::size_t l = 0; l < c.levels.size(); ++l)
        for (std::size_t i = 0; i < n; ++i) {
            const auto& obs = c.observations[l][i];
            for (std::size_t j = 0; j < obs.times.size(); ++j)
                lon << c.ids[i] << ',' << c.levels[l] << ',' << obs.times[j] << ','
                    << obs.y[j] << '\n';
        }
    emit("longitudinal.csv", lon.str());

    std::ostringstream splits;
    splits << "id,split\n";
    for (long long id : c.splits.train) splits << id << ",train\n";
    for (long long id : c.splits.val) splits << id << ",val\n";
    for (long long id : c.splits.test) splits << id << ",test\n";
    emit("splits.csv", splits.str());

    for (std::size_t i = 0; i < n; ++i)
        emit("images/" + std::to_string(c.ids[i]) + ".pgm", encode_pgm(c.images[i]));

    std::sort(m.inventory.begin(), m.inventory.end(),
              [](const manifest_entry& a, const manifest_entry& b) { return a.path < b.path; });

    atomic_write(dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
    return m;
}

// --- dataset read ---------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

struct csv_table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

// empty expect_header accepts any header; caller validates table.header itself
inline csv_table read_csv(const std::filesystem::path& path, const std::string& expect_header) {
    const std::string bytes = read_file_bytes(path);
    csv_table table;
    std::istringstream in(bytes);
    std::string line;
    if (!std::getline(in, line))
        throw integrity_error(path.string() + ": empty CSV");
    if (!expect_header.empty() && line != expect_header)
        throw integrity_error(path.string() + ": unexpected header '" + line + "'");
    table.header = split_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (fields.size() != table.header.size())
            throw integrity_error(path.string() + ": ragged CSV row");
        table.rows.push_back(std::move(fields));
    }
    return table;
}

inline double parse_real(const std::string& s, const char* where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw integrity_error(std::string(where) + ": bad real '" + s + "'");
    }
}

inline long long parse_id(const std::string& s, const char* where) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw integrity_error(std::string(where) + ": bad id '" + s + "'");
    }
}

} // namespace detail

// lazily materializes each CSV on first access; caches by level where relevant
class dataset_handle {
public:
    static dataset_handle open(const std::filesystem::path& dir, bool verify = true) {
        dataset_handle h;
        h.dir_ = dir;
        h.manifest_ = read_manifest(dir / "manifest.json");
        if (verify) verify_files(h.manifest_, dir);
        return h;
    }

    const manifest& info() const { return manifest_; }
    const std::filesystem::path& dir() const { return dir_; }

    std::vector<long long> split_ids(const std::string& which) const {
        load_splits();
        std::vector<long long> out;
        for (const auto& [id, split] : split_rows_)
            if (split == which) out.push_back(id);
        return out;
    }

    std::vector<long long> all_ids() const {
        load_splits();
        std::vector<long long> out;
        out.reserve(split_rows_.size());
        for (const auto& [id, split] : split_rows_) out.push_back(id);
        return out;
    }

    const std::vector<double>& latent(long long id) const {
        load_latents();
        return latents_.at(row_of(latent_rows_, id, "latent"));
    }

    const std::array<double, 3>& eta(long long id) const {
        load_eta();
        return eta_.at(row_of(eta_rows_, id, "eta"));
    }

    const std::array<double, 3>& eta_hat(long long id, double sigma2) const {
        load_eta_hat();
        const auto it = eta_hat_.find({sigma2, id});
        if (it == eta_hat_.end())
            throw std::invalid_argument("dataset: no eta_hat for subject " + std::to_string(id) +
                                        " at sigma2 " + std::to_string(sigma2));
        return it->second;
    }

    const nlme::observation_set& observations(long long id, double sigma2) const {
        load_observations();
        const auto it = obs_.find({sigma2, id});
        if (it == obs_.end())
            throw std::invalid_argument("dataset: no observations for subject " +
                                        std::to_string(id) + " at sigma2 " +
                                        std::to_string(sigma2));
        return it->second;
    }

    image load_image(long long id) const {
        return read_pgm(dir_ / "images" / (std::to_string(id) + ".pgm"));
    }

private:
    static std::size_t row_of(const std::unordered_map<long long, std::size_t>& rows,
                              long long id, const char* what) {
        const auto it = rows.find(id);
        if (it == rows.end())
            throw std::invalid_argument("dataset: unknown subject id " + std::to_string(id) +
                                        " for " + what);
        return it->second;
    }

    void load_splits() const {
        if (splits_loaded_) return;
        const auto table = detail::read_csv(dir_ / "splits.csv", "id,split");
        for (const auto& row : table.rows)
            split_rows_.emplace_back(detail::parse_id(row[0], "splits.csv"), row[1]);
        splits_loaded_ = true;
    }

    void load_latents() const {
        if (latents_loaded_) return;
        // latent dimension is discovered from the header itself
        const auto table = detail::read_csv(dir_ / "latents.csv", "");
        const std::size_t d = table.header.size() - 1;
        if (table.header.empty() || table.header[0] != "id")
            throw integrity_error("latents.csv: unexpected header");
        for (std::size_t k = 0; k < d; ++k)
            if (table.header[k + 1] != "z" + std::to_string(k))
                throw integrity_error("latents.csv: unexpected header");
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const auto& row = table.rows[r];
            latent_rows_[detail::parse_id(row[0], "latents.csv")] = r;
            std::vector<double> z(d);
            for (std::size_t k = 0; k < d; ++k)
                z[k] = detail::parse_real(row[k + 1], "latents.csv");
            latents_.push_back(std::move(z));
        }
        latents_loaded_ = true;
    }

    void load_eta() const {
        if (eta_loaded_) return;
        const auto table = detail::read_csv(dir_ / "eta.csv", "id,eta1,eta2,eta3");
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const auto& row = table.rows[r];
            eta_rows_[detail::parse_id(row[0], "eta.csv")] = r;
            eta_.push_back({detail::parse_real(row[1], "eta.csv"),
                            detail::parse_real(row[2], "eta.csv"),
                            detail::parse_real(row[3], "eta.csv")});
        }
        eta_loaded_ = true;
    }

    void load_eta_hat() const {
        if (eta_hat_loaded_) return;
        const auto table =
            detail::read_csv(dir_ / "eta_hat.csv", "id,sigma2,eta_hat1,eta_hat2,eta_hat3");
        for (const auto& row : table.rows) {
            const long long id = detail::parse_id(row[0], "eta_hat.csv");
            const double sigma2 = detail::parse_real(row[1], "eta_hat.csv");
            eta_hat_[{sigma2, id}] = {detail::parse_real(row[2], "eta_hat.csv"),
                                      detail::parse_real(row[3], "eta_hat.csv"),
                                      detail::parse_real(row[4], "eta_hat.csv")};
        }
        eta_hat_loaded_ = true;
    }

    void load_observations() const {
        if (obs_loaded_) return;
        const auto table = detail::read_csv(dir_ / "longitudinal.csv", "id,sigma2,time,y");
        for (const auto& row : table.rows) {
            const long long id = detail::parse_id(row[0], "longitudinal.csv");
            const double sigma2 = detail::parse_real(row[1], "longitudinal.csv");
            auto& obs = obs_[{sigma2, id}];
            obs.subject_id = id;
            obs.sigma2 = sigma2;
            obs.times.push_back(detail::parse_real(row[2], "longitudinal.csv"));
            obs.y.push_back(detail::parse_real(row[3], "longitudinal.csv"));
        }
        obs_loaded_ = true;
    }

    std::filesystem::path dir_;
    manifest manifest_;

    mutable bool splits_loaded_ = false;
    mutable std::vector<std::pair<long long, std::string>> split_rows_;
    mutable bool latents_loaded_ = false;
    mutable std::unordered_map<long long, std::size_t> latent_rows_;
    mutable std::vector<std::vector<double>> latents_;
    mutable bool eta_loaded_ = false;
    mutable std::unordered_map<long long, std::size_t> eta_rows_;
    mutable std::vector<std::array<double, 3>> eta_;
    mutable bool eta_hat_loaded_ = false;
    mutable std::map<std::pair<double, long long>, std::array<double, 3>> eta_hat_;
    mutable bool obs_loaded_ = false;
    mutable std::map<std::pair<double, long long>, nlme::observation_set> obs_;
};

inline dataset_handle read_dataset(const std::filesystem::path& dir, bool verify = true) {
    return dataset_handle::open(dir, verify);
}

} // namespace imglong::dataio
