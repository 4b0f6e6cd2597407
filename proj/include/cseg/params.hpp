#pragma once

#include "cseg/tape.hpp"
#include "cseg/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace cseg {

// Deterministic 64-bit generator (splitmix64) with explicit, portable
// uniform/normal conversions so seeded runs are identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next_u64();
    double uniform();  // [0, 1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

private:
    std::uint64_t state_;
};

// Named trainable tensors plus optimizer moments and small integer metadata
// (step counters, training progress).
class ParamStore {
public:
    struct Entry {
        Tensor value;
        Tensor m;
        Tensor v;
    };

    // Glorot-uniform init: a = sqrt(6 / (fan_in + fan_out)). Throws
    // ConfigError on duplicate names.
    Tensor& add_glorot(const std::string& name, Shape shape, std::int64_t fan_in, std::int64_t fan_out, Rng& rng);
    Tensor& add_zeros(const std::string& name, Shape shape);
    Tensor& add(const std::string& name, Tensor value);

    bool contains(const std::string& name) const { return index_.contains(name); }
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    Entry& entry(const std::string& name);
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }
    std::size_t scalar_count() const;

    std::int64_t meta(const std::string& key, std::int64_t fallback = 0) const;
    void set_meta(const std::string& key, std::int64_t value) { meta_[key] = value; }

    // "C4DS" checkpoint; moments and metadata included. Bit-exact round trip.
    void save(const std::filesystem::path& path) const;
    static ParamStore load(const std::filesystem::path& path);

    // FNV-1a over the raw bytes of every parameter whose name has the prefix.
    std::uint64_t checksum(const std::string& prefix = "") const;

    bool same_values(const ParamStore& other) const;

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<Entry> entries_;
    std::map<std::string, std::int64_t> meta_;
};

// Binds ParamStore tensors onto one Tape. Parameters whose name starts with a
// frozen prefix enter as constants; overrides substitute pre-made Vars (used
// by gradient checks).
class ParamBinder {
public:
    ParamBinder(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

    void freeze_prefix(std::string prefix) { frozen_.push_back(std::move(prefix)); }
    void override_var(const std::string& name, Var v) { bound_[name] = v; }

    Var operator()(const std::string& name);
    Tape& tape() { return tape_; }
    const std::unordered_map<std::string, Var>& bound() const { return bound_; }
    bool frozen(const std::string& name) const;

private:
    Tape& tape_;
    const ParamStore& store_;
    std::vector<std::string> frozen_;
    std::unordered_map<std::string, Var> bound_;
};

}  // namespace cseg
