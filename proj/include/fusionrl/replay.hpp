#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <vector>

#include "arena.hpp"
#include "binary_io.hpp"
#include "errors.hpp"
#include "random.hpp"

namespace fusionrl {

struct Transition {
    Observation obs;
    Action action = Action::MoveLeft;
    double reward = 0.0;
    Observation next_obs;
    bool terminal = false; ///< no bootstrap from next_obs

    friend bool operator==(const Transition&, const Transition&) = default;
};

struct PoolConfig {
    std::size_t capacity = 1'000'000;
    std::size_t batch_size = 32;
    std::size_t min_fill = 10'000; ///< training starts once the pool holds this many

    void validate() const {
        if (batch_size < 1) throw ConfigError("pool batch_size must be >= 1");
        if (capacity < batch_size) throw ConfigError("pool capacity must be >= batch_size");
    }
};

/// Bounded FIFO experience pool for many producers and one consumer.
///
/// A push reserves a ticket under a short index lock, then writes its slot
/// (ticket mod capacity) under that slot's own lock. Sampling copies one slot
/// at a time under the slot lock, so a reader sees either the old or the new
/// record in full and producers are only ever blocked on a single slot.
class ReplayPool {
public:
    explicit ReplayPool(PoolConfig cfg) : cfg_(cfg), slots_(nullptr) {
        cfg_.validate();
        slots_ = std::make_unique<Slot[]>(cfg_.capacity);
    }

    const PoolConfig& config() const { return cfg_; }
    std::size_t capacity() const { return cfg_.capacity; }

    void push(Transition t) {
        std::uint64_t ticket;
        {
            std::lock_guard lock(index_mutex_);
            ticket = next_ticket_++;
        }
        Slot& slot = slots_[ticket % cfg_.capacity];
        std::lock_guard lock(slot.mutex);
        // A stalled producer must not overwrite a newer record.
        if (slot.filled && slot.ticket > ticket) return;
        slot.transition = std::move(t);
        slot.ticket = ticket;
        slot.filled = true;
    }

    std::size_t size() const {
        std::lock_guard lock(index_mutex_);
        return static_cast<std::size_t>(std::min<std::uint64_t>(next_ticket_, cfg_.capacity));
    }

    std::uint64_t total_pushed() const {
        std::lock_guard lock(index_mutex_);
        return next_ticket_;
    }

    /// Uniform with replacement over the current contents.
    std::vector<Transition> sample(std::size_t batch_size, Rng& rng) const {
        const std::size_t n = size();
        if (n < batch_size || n == 0)
            throw ContractViolation("cannot sample " + std::to_string(batch_size) + " transitions from a pool of " +
                                    std::to_string(n));
        std::vector<Transition> out;
        out.reserve(batch_size);
        while (out.size() < batch_size) {
            const Slot& slot = slots_[uniform_index(rng, n)];
            std::lock_guard lock(slot.mutex);
            // reserved but not yet written: draw again
            if (!slot.filled) continue;
            out.push_back(slot.transition);
        }
        return out;
    }

    std::vector<Transition> sample(Rng& rng) const { return sample(cfg_.batch_size, rng); }

    /// Oldest first.
    std::vector<Transition> contents() const {
        std::uint64_t end;
        {
            std::lock_guard lock(index_mutex_);
            end = next_ticket_;
        }
        const std::uint64_t begin = end > cfg_.capacity ? end - cfg_.capacity : 0;
        std::vector<Transition> out;
        out.reserve(static_cast<std::size_t>(end - begin));
        for (std::uint64_t t = begin; t < end; ++t) {
            const Slot& slot = slots_[t % cfg_.capacity];
            std::lock_guard lock(slot.mutex);
            if (slot.filled) out.push_back(slot.transition);
        }
        return out;
    }

private:
    struct Slot {
        mutable std::mutex mutex;
        Transition transition;
        std::uint64_t ticket = 0;
        bool filled = false;
    };

    PoolConfig cfg_;
    std::unique_ptr<Slot[]> slots_;
    mutable std::mutex index_mutex_;
    std::uint64_t next_ticket_ = 0;
};

// ---------------------------------------------------------------------------
// Pool files: "FRLPOOL1" | u32 version | u32 rays | u64 count | records.
// Each record: obs, u8 action, f64 reward, next obs, u8 terminal, where an
// observation is 3 x rays f32 ranges followed by 3 u8 availability flags.

inline constexpr char kPoolMagic[9] = "FRLPOOL1";
inline constexpr std::uint32_t kPoolVersion = 1;

namespace detail {

inline void write_observation(std::ostream& out, const Observation& o, std::size_t rays) {
    for (const auto& s : o.scans) {
        if (s.ranges.size() != rays) throw ShapeError("pool file: scan length does not match header");
        io::write_array_le(out, s.ranges.data(), rays);
    }
    for (bool a : o.available) io::write_le<std::uint8_t>(out, a ? 1 : 0);
}

inline Observation read_observation(std::istream& in, std::size_t rays) {
    Observation o;
    for (auto& s : o.scans) {
        s.ranges.resize(rays);
        io::read_array_le(in, s.ranges.data(), rays);
    }
    for (auto& a : o.available) a = io::read_le<std::uint8_t>(in) != 0;
    return o;
}

} // namespace detail

/// Streams transitions to a pool file; the record count is patched on close.
class PoolFileWriter {
public:
    PoolFileWriter(const std::filesystem::path& path, std::size_t rays)
        : out_(path, std::ios::binary | std::ios::trunc), rays_(rays), path_(path) {
        if (!out_) throw FormatError("cannot open pool file '" + path.string() + "' for writing");
        io::write_magic(out_, kPoolMagic);
        io::write_le<std::uint32_t>(out_, kPoolVersion);
        io::write_le<std::uint32_t>(out_, static_cast<std::uint32_t>(rays));
        count_pos_ = out_.tellp();
        io::write_le<std::uint64_t>(out_, 0);
    }
    PoolFileWriter(const PoolFileWriter&) = delete;
    PoolFileWriter& operator=(const PoolFileWriter&) = delete;
    ~PoolFileWriter() {
        try {
            close();
        } catch (...) {
        }
    }

    void write(const Transition& t) {
        detail::write_observation(out_, t.obs, rays_);
        io::write_le<std::uint8_t>(out_, static_cast<std::uint8_t>(t.action));
        io::write_le<double>(out_, t.reward);
        detail::write_observation(out_, t.next_obs, rays_);
        io::write_le<std::uint8_t>(out_, t.terminal ? 1 : 0);
        ++count_;
        if (!out_) throw FormatError("write failure on pool file '" + path_.string() + "'");
    }

    std::uint64_t count() const { return count_; }

    void close() {
        if (!out_.is_open()) return;
        out_.seekp(count_pos_);
        io::write_le<std::uint64_t>(out_, count_);
        out_.close();
        if (out_.fail()) throw FormatError("failed to finalize pool file '" + path_.string() + "'");
    }

private:
    std::ofstream out_;
    std::size_t rays_;
    std::filesystem::path path_;
    std::streampos count_pos_;
    std::uint64_t count_ = 0;
};

inline std::vector<Transition> read_pool_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open pool file '" + path.string() + "'");
    io::expect_magic(in, kPoolMagic, "pool");
    if (io::read_le<std::uint32_t>(in) != kPoolVersion) throw FormatError("unsupported pool file version");
    const auto rays = io::read_le<std::uint32_t>(in);
    const auto count = io::read_le<std::uint64_t>(in);
    std::vector<Transition> out;
    out.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        Transition t;
        t.obs = detail::read_observation(in, rays);
        const auto a = io::read_le<std::uint8_t>(in);
        if (a >= kActionCount) throw FormatError("pool file: invalid action");
        t.action = static_cast<Action>(a);
        t.reward = io::read_le<double>(in);
        t.next_obs = detail::read_observation(in, rays);
        t.terminal = io::read_le<std::uint8_t>(in) != 0;
        out.push_back(std::move(t));
    }
    return out;
}

/// Record count from a pool file header.
inline std::uint64_t pool_file_count(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open pool file '" + path.string() + "'");
    io::expect_magic(in, kPoolMagic, "pool");
    if (io::read_le<std::uint32_t>(in) != kPoolVersion) throw FormatError("unsupported pool file version");
    io::read_le<std::uint32_t>(in);
    return io::read_le<std::uint64_t>(in);
}

inline void write_pool_file(const std::filesystem::path& path, const std::vector<Transition>& ts, std::size_t rays) {
    PoolFileWriter w(path, rays);
    for (const auto& t : ts) w.write(t);
    w.close();
}

} // namespace fusionrl
