#include "cseg/params.hpp"

#include "cseg/errors.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace cseg {

std::uint64_t Rng::next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    // Box-Muller; u1 kept away from zero.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

Tensor& ParamStore::add(const std::string& name, Tensor value) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name " + name);
    index_[name] = entries_.size();
    order_.push_back(name);
    Entry e;
    e.m = Tensor(value.shape());
    e.v = Tensor(value.shape());
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    return entries_.back().value;
}

Tensor& ParamStore::add_glorot(const std::string& name, Shape shape, std::int64_t fan_in, std::int64_t fan_out,
                               Rng& rng) {
    Tensor t(std::move(shape));
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.values()) v = rng.uniform(-a, a);
    return add(name, std::move(t));
}

Tensor& ParamStore::add_zeros(const std::string& name, Shape shape) { return add(name, Tensor(std::move(shape))); }

ParamStore::Entry& ParamStore::entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return entries_[it->second];
}

Tensor& ParamStore::get(const std::string& name) { return entry(name).value; }

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return entries_[it->second].value;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

std::int64_t ParamStore::meta(const std::string& key, std::int64_t fallback) const {
    auto it = meta_.find(key);
    return it == meta_.end() ? fallback : it->second;
}

namespace {

constexpr char kMagic[4] = {'C', '4', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;
const std::string kMomentM = "adam.m/";
const std::string kMomentV = "adam.v/";
const std::string kMeta = "meta/";

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_record(std::ofstream& out, const std::string& name, const Tensor& t) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put(out, static_cast<std::int64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

class Reader {
public:
    Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw DataError("cannot open checkpoint " + path.string());
    }

    template <typename T>
    T get() {
        T v{};
        read(&v, sizeof(T));
        return v;
    }

    void read(void* dst, std::size_t n) {
        if (!in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n))) {
            throw DataError("truncated checkpoint " + path_.string() + " at offset " + std::to_string(offset_));
        }
        offset_ += n;
    }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
    std::size_t offset() const { return offset_; }

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::size_t offset_ = 0;
};

}  // namespace

void ParamStore::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    put(out, kVersion);
    for (std::size_t i = 0; i < order_.size(); ++i) put_record(out, order_[i], entries_[i].value);
    for (std::size_t i = 0; i < order_.size(); ++i) {
        put_record(out, kMomentM + order_[i], entries_[i].m);
        put_record(out, kMomentV + order_[i], entries_[i].v);
    }
    for (const auto& [k, v] : meta_) put_record(out, kMeta + k, Tensor::scalar(static_cast<double>(v)));
    if (!out) throw DataError("write failed on checkpoint " + path.string());
}

ParamStore ParamStore::load(const std::filesystem::path& path) {
    Reader in(path);
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError(path.string() + " is not a C4DS checkpoint");
    const auto version = in.get<std::uint32_t>();
    if (version != kVersion) {
        throw DataError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                        std::to_string(kVersion) + ")");
    }
    ParamStore store;
    while (!in.at_end()) {
        const auto name_len = in.get<std::uint32_t>();
        if (name_len > 4096) throw DataError("corrupt checkpoint record at offset " + std::to_string(in.offset()));
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rank = in.get<std::uint32_t>();
        if (rank > 4) throw DataError("corrupt checkpoint record " + name + ": rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& d : shape) d = in.get<std::int64_t>();
        Tensor t(shape);
        in.read(t.data(), t.size() * sizeof(double));

        if (name.starts_with(kMomentM)) {
            store.entry(name.substr(kMomentM.size())).m = std::move(t);
        } else if (name.starts_with(kMomentV)) {
            store.entry(name.substr(kMomentV.size())).v = std::move(t);
        } else if (name.starts_with(kMeta)) {
            store.set_meta(name.substr(kMeta.size()), static_cast<std::int64_t>(t.item()));
        } else {
            store.add(name, std::move(t));
        }
    }
    return store;
}

std::uint64_t ParamStore::checksum(const std::string& prefix) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < order_.size(); ++i) {
        if (!order_[i].starts_with(prefix)) continue;
        const auto* bytes = reinterpret_cast<const unsigned char*>(entries_[i].value.data());
        for (std::size_t b = 0; b < entries_[i].value.size() * sizeof(double); ++b) {
            h ^= bytes[b];
            h *= 1099511628211ULL;
        }
    }
    return h;
}

bool ParamStore::same_values(const ParamStore& other) const {
    if (order_ != other.order_) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.value.shape() != b.value.shape()) return false;
        if (std::memcmp(a.value.data(), b.value.data(), a.value.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

bool ParamBinder::frozen(const std::string& name) const {
    for (const auto& p : frozen_) {
        if (name.starts_with(p)) return true;
    }
    return false;
}

Var ParamBinder::operator()(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    const Tensor& value = store_.get(name);
    const Var v = frozen(name) ? tape_.constant(value) : tape_.variable(value);
    bound_[name] = v;
    return v;
}

}  // namespace cseg
