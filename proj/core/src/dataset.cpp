#include "engage/dataset.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "engage/rng.hpp"

namespace engage::io {

std::vector<sim::Transition> build_transitions(std::span<const SessionRecord> records) {
    std::map<std::uint64_t, std::vector<const SessionRecord*>> sessions;
    for (const auto& r : records) {
        if (r.reward > 1) {
            throw DataError("session " + std::to_string(r.session_id) + " step " +
                            std::to_string(r.step) + ": reward must be 0 or 1");
        }
        sessions[r.session_id].push_back(&r);
    }

    std::vector<sim::Transition> out;
    out.reserve(records.size());
    for (auto& [id, rows] : sessions) {
        std::stable_sort(rows.begin(), rows.end(),
                         [](const SessionRecord* a, const SessionRecord* b) { return a->step < b->step; });
        for (std::size_t k = 0; k < rows.size(); ++k) {
            if (rows[k]->step != k) {
                const bool duplicate = k > 0 && rows[k]->step == rows[k - 1]->step;
                throw DataError("session " + std::to_string(id) + ": " +
                                (duplicate ? "duplicate step " + std::to_string(rows[k]->step)
                                           : "missing step " + std::to_string(k)));
            }
        }
        for (std::size_t k = 0; k < rows.size(); ++k) {
            sim::Transition t;
            t.session_id = id;
            t.step = rows[k]->step;
            t.state = rows[k]->state;
            t.action = rows[k]->action;
            t.reward = rows[k]->reward;
            t.terminal = k + 1 == rows.size();
            if (!t.terminal) {
                t.next_state = rows[k + 1]->state;
                t.next_action = rows[k + 1]->action;
            }
            out.push_back(std::move(t));
        }
    }
    return out;
}

BatchIterator::BatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                             std::size_t epochs)
    : n_(n), batch_size_(batch_size), seed_(seed), epochs_(epochs), order_(n) {
    if (batch_size == 0) throw ValidationError("batch size must be at least 1");
    if (n_ > 0 && epochs_ > 0) shuffle_epoch();
}

std::size_t BatchIterator::batches_per_epoch() const noexcept {
    return (n_ + batch_size_ - 1) / batch_size_;
}

void BatchIterator::shuffle_epoch() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Engine rng = stream_engine(seed_, epoch_);
    std::shuffle(order_.begin(), order_.end(), rng);
    cursor_ = 0;
}

std::optional<std::span<const std::size_t>> BatchIterator::next() {
    if (n_ == 0 || epoch_ >= epochs_) return std::nullopt;
    if (cursor_ >= n_) {
        if (++epoch_ >= epochs_) return std::nullopt;
        shuffle_epoch();
    }
    const std::size_t size = std::min(batch_size_, n_ - cursor_);
    std::span<const std::size_t> batch(order_.data() + cursor_, size);
    cursor_ += size;
    return batch;
}

}  // namespace engage::io
