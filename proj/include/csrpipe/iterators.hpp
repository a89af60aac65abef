#ifndef CSRPIPE_ITERATORS_HPP
#define CSRPIPE_ITERATORS_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "csrpipe/errors.hpp"

namespace csrpipe {

// Pull-based operator algebra. Every operator below both consumes and
// produces this interface, so chains compose freely across sources
// (spill files, in-network sessions, merges, joins). Constructing a chain
// performs no scanning; elements flow only while someone drives next().
template <class T>
class ElementIterator {
public:
    using value_type = T;

    virtual ~ElementIterator() = default;

    /// True once the sequence is exhausted; stays true afterwards.
    virtual bool eos() = 0;

    /// Current element; stable until the next next(). Undefined past eos.
    virtual const T& get() = 0;

    /// Advance to the following element.
    virtual void next() = 0;

    /// Release resources. Idempotent. Draining semantics are per-operator.
    virtual void clean() = 0;

    std::pair<ElementIterator*, T> xget() { return {this, get()}; }
};

template <class T>
using IterPtr = std::unique_ptr<ElementIterator<T>>;

/// Owning in-memory source.
template <class T>
class VecIter final : public ElementIterator<T> {
public:
    explicit VecIter(std::vector<T> data) : data_(std::move(data)) {}

    bool eos() override { return pos_ >= data_.size(); }
    const T& get() override { return data_[pos_]; }
    void next() override { ++pos_; }
    void clean() override {
        data_.clear();
        data_.shrink_to_fit();
        pos_ = 0;
    }

private:
    std::vector<T> data_;
    std::size_t pos_ = 0;
};

template <class T>
IterPtr<T> make_vec_iter(std::vector<T> data) {
    return std::make_unique<VecIter<T>>(std::move(data));
}

/// Wrapper counting next() calls; used to assert operator laziness.
template <class T>
class CountingIter final : public ElementIterator<T> {
public:
    CountingIter(IterPtr<T> inner, std::shared_ptr<std::uint64_t> next_calls)
        : inner_(std::move(inner)), next_calls_(std::move(next_calls)) {}

    bool eos() override { return inner_->eos(); }
    const T& get() override { return inner_->get(); }
    void next() override {
        ++*next_calls_;
        inner_->next();
    }
    void clean() override { inner_->clean(); }

private:
    IterPtr<T> inner_;
    std::shared_ptr<std::uint64_t> next_calls_;
};

// K-way merge of sorted inputs. Exhausted inputs are skipped at init; ties
// pop in ascending input-index order so the output is deterministic. Each
// input is spot-checked for sortedness as it is consumed.
template <class T, class Cmp>
class SortedMergeIter final : public ElementIterator<T> {
public:
    SortedMergeIter(std::vector<IterPtr<T>> inputs, Cmp cmp)
        : inputs_(std::move(inputs)), cmp_(cmp) {
        heap_.reserve(inputs_.size());
        for (std::size_t i = 0; i < inputs_.size(); ++i) {
            if (!inputs_[i]->eos()) heap_.push_back(Entry{inputs_[i]->get(), i});
        }
        std::make_heap(heap_.begin(), heap_.end(), HeapCmp{cmp_});
        if (!heap_.empty()) current_ = heap_.front().value;
    }

    bool eos() override { return heap_.empty(); }
    const T& get() override { return current_; }

    void next() override {
        std::pop_heap(heap_.begin(), heap_.end(), HeapCmp{cmp_});
        Entry e = heap_.back();
        heap_.pop_back();
        auto& src = *inputs_[e.index];
        src.next();
        if (!src.eos()) {
            const T& v = src.get();
            if (cmp_(v, e.value))
                throw sortedness_error(e.index, "merge input " + std::to_string(e.index) +
                                                    " is not sorted");
            heap_.push_back(Entry{v, e.index});
            std::push_heap(heap_.begin(), heap_.end(), HeapCmp{cmp_});
        }
        if (!heap_.empty()) current_ = heap_.front().value;
    }

    void clean() override {
        if (cleaned_) return;
        cleaned_ = true;
        while (!eos()) next();
        for (auto& in : inputs_) in->clean();
    }

private:
    struct Entry {
        T value;
        std::size_t index;
    };
    // std heap functions build a max-heap; invert so the front is smallest,
    // with index as tie-break.
    struct HeapCmp {
        Cmp cmp;
        bool operator()(const Entry& a, const Entry& b) const {
            if (cmp(b.value, a.value)) return true;
            if (cmp(a.value, b.value)) return false;
            return b.index < a.index;
        }
    };

    std::vector<IterPtr<T>> inputs_;
    Cmp cmp_;
    std::vector<Entry> heap_;
    T current_{};
    bool cleaned_ = false;
};

template <class T, class Cmp>
IterPtr<T> sorted_merge(std::vector<IterPtr<T>> inputs, Cmp cmp) {
    return std::make_unique<SortedMergeIter<T, Cmp>>(std::move(inputs), cmp);
}

/// Drops duplicates from a sorted sequence.
template <class T, class Eq = std::equal_to<T>>
class UniqIter final : public ElementIterator<T> {
public:
    explicit UniqIter(IterPtr<T> in, Eq eq = {}) : in_(std::move(in)), eq_(eq) {}

    bool eos() override { return in_->eos(); }
    const T& get() override { return in_->get(); }
    void next() override {
        T prev = in_->get();
        do {
            in_->next();
        } while (!in_->eos() && eq_(in_->get(), prev));
    }
    void clean() override { in_->clean(); }

private:
    IterPtr<T> in_;
    Eq eq_;
};

template <class T>
IterPtr<T> uniq(IterPtr<T> in) {
    return std::make_unique<UniqIter<T>>(std::move(in));
}

/// Pairs each element with its dense 0-based position in scan order.
template <class T>
class EnumerateIter final : public ElementIterator<std::pair<std::uint64_t, T>> {
public:
    explicit EnumerateIter(IterPtr<T> in) : in_(std::move(in)) {}

    bool eos() override { return in_->eos(); }
    const std::pair<std::uint64_t, T>& get() override {
        current_ = {index_, in_->get()};
        return current_;
    }
    void next() override {
        ++index_;
        in_->next();
    }
    void clean() override { in_->clean(); }

private:
    IterPtr<T> in_;
    std::uint64_t index_ = 0;
    std::pair<std::uint64_t, T> current_{};
};

template <class T>
IterPtr<std::pair<std::uint64_t, T>> enumerate(IterPtr<T> in) {
    return std::make_unique<EnumerateIter<T>>(std::move(in));
}

/// Order-preserving subsequence of elements satisfying pred.
template <class T, class Pred>
class FilterIter final : public ElementIterator<T> {
public:
    FilterIter(Pred pred, IterPtr<T> in) : pred_(pred), in_(std::move(in)) {}

    bool eos() override {
        skip();
        return in_->eos();
    }
    const T& get() override {
        skip();
        return in_->get();
    }
    void next() override {
        skip();
        in_->next();
        settled_ = false;
    }
    void clean() override { in_->clean(); }

private:
    void skip() {
        if (settled_) return;
        while (!in_->eos() && !pred_(in_->get())) in_->next();
        settled_ = true;
    }
    Pred pred_;
    IterPtr<T> in_;
    bool settled_ = false;
};

template <class T, class Pred>
IterPtr<T> filter(Pred pred, IterPtr<T> in) {
    return std::make_unique<FilterIter<T, Pred>>(pred, std::move(in));
}

/// Element-wise application of fn (the stream analogue of map).
template <class In, class Out, class Fn>
class TransformIter final : public ElementIterator<Out> {
public:
    TransformIter(IterPtr<In> in, Fn fn) : in_(std::move(in)), fn_(fn) {}

    bool eos() override { return in_->eos(); }
    const Out& get() override {
        current_ = fn_(in_->get());
        return current_;
    }
    void next() override { in_->next(); }
    void clean() override { in_->clean(); }

private:
    IterPtr<In> in_;
    Fn fn_;
    Out current_{};
};

template <class Out, class In, class Fn>
IterPtr<Out> transform(IterPtr<In> in, Fn fn) {
    return std::make_unique<TransformIter<In, Out, Fn>>(std::move(in), fn);
}

// Streaming join of two key-sorted inputs. Inner must carry unique keys and
// cover every outer key; one output is produced per outer element, in outer
// order. Init may advance the inner stream (never the outer); a key absent
// from inner raises join_key_miss when the cursor reaches it.
template <class In, class Out, class R, class JoinFn, class InKey, class OutKey>
class SortMergeJoinIter final : public ElementIterator<R> {
public:
    SortMergeJoinIter(IterPtr<In> inner, IterPtr<Out> outer, JoinFn join_fn, InKey in_key,
                      OutKey out_key)
        : inner_(std::move(inner)), outer_(std::move(outer)), join_fn_(join_fn), in_key_(in_key),
          out_key_(out_key) {
        if (!outer_->eos()) align_inner();
    }

    bool eos() override { return outer_->eos(); }

    const R& get() override {
        if (!cached_) {
            current_ = join_fn_(inner_->get(), outer_->get());
            cached_ = true;
        }
        return current_;
    }

    void next() override {
        cached_ = false;
        outer_->next();
        if (outer_->eos()) return;
        if (!inner_->eos() && out_key_(outer_->get()) == in_key_(inner_->get())) return;
        align_inner();
    }

    void clean() override {
        if (cleaned_) return;
        cleaned_ = true;
        inner_->clean();
        outer_->clean();
    }

private:
    void align_inner() {
        const auto k = out_key_(outer_->get());
        while (!inner_->eos() && in_key_(inner_->get()) < k) inner_->next();
        if (inner_->eos() || !(in_key_(inner_->get()) == k)) throw join_key_miss(k);
    }

    IterPtr<In> inner_;
    IterPtr<Out> outer_;
    JoinFn join_fn_;
    InKey in_key_;
    OutKey out_key_;
    R current_{};
    bool cached_ = false;
    bool cleaned_ = false;
};

template <class R, class In, class Out, class JoinFn, class InKey, class OutKey>
IterPtr<R> sort_merge_join(IterPtr<In> inner, IterPtr<Out> outer, JoinFn join_fn, InKey in_key,
                           OutKey out_key) {
    return std::make_unique<SortMergeJoinIter<In, Out, R, JoinFn, InKey, OutKey>>(
        std::move(inner), std::move(outer), join_fn, in_key, out_key);
}

/// Drain an iterator, applying fn to every element.
template <class T, class Fn>
void scan(ElementIterator<T>& it, Fn fn) {
    while (!it.eos()) {
        fn(it.get());
        it.next();
    }
}

template <class T>
std::vector<T> collect(ElementIterator<T>& it) {
    std::vector<T> out;
    scan(it, [&](const T& v) { out.push_back(v); });
    return out;
}

} // namespace csrpipe

#endif
