#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "engage/common.hpp"
#include "engage/simenv.hpp"

namespace engage::io {

// One logged decision before successor pairing.
struct SessionRecord {
    std::uint64_t session_id = 0;
    std::uint32_t step = 0;
    FeatureIds state;
    ActionId action = 0;
    std::uint8_t reward = 0;

    bool operator==(const SessionRecord&) const = default;
};

// Pairs consecutive records of each session into transitions; the last record
// of a session becomes the terminal transition. Output is ordered by
// (session_id, step) regardless of input interleaving. Throws DataError on a
// duplicate or missing step.
std::vector<sim::Transition> build_transitions(std::span<const SessionRecord> records);

// Seeded minibatch order over indices [0, n). Every epoch is a fresh
// permutation drawn from stream derive_seed(seed, epoch); the final short
// batch of an epoch is kept.
class BatchIterator {
  public:
    BatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                  std::size_t epochs);

    // Indices of the next batch; nullopt once all epochs are consumed. The
    // span stays valid until the following call.
    std::optional<std::span<const std::size_t>> next();

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batches_per_epoch() const noexcept;
    std::size_t total_batches() const noexcept { return batches_per_epoch() * epochs_; }

  private:
    void shuffle_epoch();

    std::size_t n_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t epochs_;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

}  // namespace engage::io
