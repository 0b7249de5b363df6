#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "microcustom/checkpoint.hpp"
#include "microcustom/tape.hpp"
#include "microcustom/tensor.hpp"
#include "microcustom/vocab.hpp"

namespace mc {

// Ordered named parameter collection owned by a model.
template <typename T>
class ParamSet {
public:
    Tensor<T>& add(const std::string& name, std::vector<int64_t> shape) {
        if (index_.count(name)) throw std::runtime_error("param already exists: " + name);
        index_[name] = names_.size();
        names_.push_back(name);
        tensors_.push_back(Tensor<T>::zeros(std::move(shape)));
        return tensors_.back();
    }
    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("unknown param: " + name);
        return tensors_[it->second];
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("unknown param: " + name);
        return tensors_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const std::vector<std::string>& names() const { return names_; }

    uint64_t content_hash() const {
        uint64_t h = 1469598103934665603ull;
        for (size_t i = 0; i < names_.size(); ++i) {
            for (char c : names_[i]) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
            h = hash_combine(h, tensor_hash(tensors_[i]));
        }
        return h;
    }

    void save_into(TensorStore& store, const std::string& prefix) const {
        for (size_t i = 0; i < names_.size(); ++i)
            store.put(prefix + names_[i], tensors_[i].template cast<float>());
    }
    void load_from(const TensorStore& store, const std::string& prefix) {
        for (size_t i = 0; i < names_.size(); ++i) {
            const Tensor<float>& src = store.get(prefix + names_[i]);
            if (src.shape != tensors_[i].shape)
                throw std::runtime_error("checkpoint shape mismatch for " + prefix + names_[i]);
            tensors_[i] = src.template cast<T>();
        }
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::map<std::string, size_t> index_;
};

// Lifts named parameters onto a tape exactly once per step; trainable names
// become leaves, everything else constants. After backward the gradients of
// the leaves can be read back by name.
template <typename T>
class Binder {
public:
    Binder(Tape<T>& tape, ParamSet<T>& params, std::set<std::string> trainable = {})
        : tape_(tape), params_(params), trainable_(std::move(trainable)) {}

    int operator()(const std::string& name) {
        auto it = ids_.find(name);
        if (it != ids_.end()) return it->second;
        const Tensor<T>& p = params_.get(name);
        const int id = trainable_.count(name) ? tape_.leaf(p) : tape_.input(p);
        ids_[name] = id;
        return id;
    }

    bool is_trainable(const std::string& name) const { return trainable_.count(name) != 0; }
    bool was_lifted(const std::string& name) const { return ids_.count(name) != 0; }
    const std::set<std::string>& trainable() const { return trainable_; }

    // zero tensor when the parameter never entered the graph this step
    Tensor<T> grad_of(const std::string& name) const {
        auto it = ids_.find(name);
        if (it == ids_.end()) return Tensor<T>::zeros(params_.get(name).shape);
        const Tensor<T>& g = tape_.grad(it->second);
        if (g.numel() == 0) return Tensor<T>::zeros(params_.get(name).shape);
        return g;
    }

    Tape<T>& tape() { return tape_; }
    ParamSet<T>& params() { return params_; }

private:
    Tape<T>& tape_;
    ParamSet<T>& params_;
    std::set<std::string> trainable_;
    std::map<std::string, int> ids_;
};

// Captured attention maps from one forward pass.
template <typename T>
struct AttentionTrace {
    struct Entry {
        int layer;
        int head;
        Tensor<T> attn;   // queries x keys, rows sum to 1
        Tensor<T> value;  // keys x head_dim
    };
    std::vector<Entry> entries;
    // pre-output-projection concatenated head outputs, one per layer
    std::vector<Tensor<T>> layer_concat;
    // snapshots for the attention-norm bound: Q (queries x d) and W_K (d x d)
    std::vector<Tensor<T>> q_snapshots;
    std::vector<Tensor<T>> wk_snapshots;
};

// Multi-head attention. q over x_q, k/v over x_kv, optional additive mask
// (broadcast to every head), optional trace capture. Parameter names are
// <prefix>.wq/.wk/.wv/.wo (all d x d).
template <typename T>
int multihead_attention(Binder<T>& bind, const std::string& prefix, int x_q, int x_kv, int heads,
                        int additive_mask /*-1 for none*/, AttentionTrace<T>* trace = nullptr,
                        int trace_layer = 0) {
    Tape<T>& tp = bind.tape();
    const int64_t d = tp.val(x_q).cols();
    const int64_t dk = d / heads;
    const int wq = bind(prefix + ".wq");
    const int wk = bind(prefix + ".wk");
    const int wv = bind(prefix + ".wv");
    const int wo = bind(prefix + ".wo");
    const int q = tp.matmul(x_q, wq);
    const int k = tp.matmul(x_kv, wk);
    const int v = tp.matmul(x_kv, wv);
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    int concat = -1;
    for (int h = 0; h < heads; ++h) {
        const int qh = tp.slice_cols(q, h * dk, (h + 1) * dk);
        const int kh = tp.slice_cols(k, h * dk, (h + 1) * dk);
        const int vh = tp.slice_cols(v, h * dk, (h + 1) * dk);
        int scores = tp.scale(tp.matmul_nt(qh, kh), inv_sqrt);
        if (additive_mask >= 0) scores = tp.add(scores, additive_mask);
        const int attn = tp.softmax_rows(scores);
        if (trace) {
            trace->entries.push_back({trace_layer, h, tp.val(attn), tp.val(vh)});
        }
        const int oh = tp.matmul(attn, vh);
        concat = h == 0 ? oh : tp.concat_cols(concat, oh);
    }
    if (trace) {
        trace->layer_concat.push_back(tp.val(concat));
        trace->q_snapshots.push_back(tp.val(q));
        trace->wk_snapshots.push_back(tp.val(wk));
    }
    return tp.matmul(concat, wo);
}

template <typename T>
void init_linear(Tensor<T>& w, Rng& rng) {
    const double fan_in = static_cast<double>(w.rows());
    fill_normal(w, rng, 1.0 / std::sqrt(fan_in > 0 ? fan_in : 1.0));
}

template <typename T>
void add_attention_params(ParamSet<T>& ps, const std::string& prefix, int64_t d, Rng& rng) {
    for (const char* n : {".wq", ".wk", ".wv", ".wo"}) init_linear(ps.add(prefix + n, {d, d}), rng);
}

template <typename T>
void add_layernorm_params(ParamSet<T>& ps, const std::string& prefix, int64_t d) {
    Tensor<T>& g = ps.add(prefix + ".g", {1, d});
    std::fill(g.data.begin(), g.data.end(), T(1));
    ps.add(prefix + ".b", {1, d});
}

// Additive masks shared by the text-side models.
template <typename T>
Tensor<T> causal_mask_tensor(int64_t L) {
    Tensor<T> m({L, L});
    for (int64_t i = 0; i < L; ++i)
        for (int64_t j = i + 1; j < L; ++j) m.at(i, j) = T(-1e9);
    return m;
}

template <typename T>
Tensor<T> key_pad_mask_tensor(const std::vector<int>& ids, int64_t rows) {
    Tensor<T> m({rows, static_cast<int64_t>(ids.size())});
    for (int64_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < ids.size(); ++j)
            if (ids[j] == kPadId) m.at(i, static_cast<int64_t>(j)) = T(-1e9);
    return m;
}

}  // namespace mc
