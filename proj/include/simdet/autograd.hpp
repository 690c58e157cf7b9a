// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "simdet/memtrace.hpp"
#include "simdet/tensor.hpp"

namespace simdet {

using ValueId = int32_t;
using GradMap = std::map<ValueId, Tensor>;

// Extension point for ops with bespoke backward rules (BN variants,
// fused losses). Inputs not listed in saved_inputs are passed to
// backward as nullptr; the closure must not touch them.
struct CustomOp {
    std::string name;
    std::function<Tensor(const std::vector<const Tensor*>&, std::vector<Tensor>& stash)> forward;
    std::function<std::vector<Tensor>(const Tensor& dy, const std::vector<const Tensor*>& inputs,
                                      const Tensor* output, const std::vector<Tensor>& stash)>
        backward;
    std::vector<size_t> saved_inputs;
    bool save_output = false;
    std::string stash_tag = "stat";
    std::string output_tag = "act";
};

// Define-by-run reverse-mode tape. Forward values are computed at record
// time; backward walks nodes in reverse order, which also fixes the
// gradient accumulation order.
class Tape {
public:
    explicit Tape(MemoryTrace* trace = nullptr);
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    ValueId leaf(Tensor t, bool requires_grad = true, bool metered = false, const std::string& tag = "leaf");

    ValueId matmul(ValueId a, ValueId b);
    ValueId conv2d(ValueId x, ValueId k, int stride, int pad);
    ValueId add(ValueId a, ValueId b);
    ValueId sub(ValueId a, ValueId b);
    ValueId mul(ValueId a, ValueId b);
    ValueId relu(ValueId a);
    ValueId leaky_relu(ValueId a, float slope);
    ValueId exp_(ValueId a);
    ValueId scale(ValueId a, float s);
    ValueId reduce_sum(ValueId a, const std::vector<int>& axes);
    ValueId reduce_mean(ValueId a, const std::vector<int>& axes);
    ValueId reduce_max(ValueId a, const std::vector<int>& axes);
    ValueId reshape(ValueId a, Shape shape);
    ValueId custom(std::shared_ptr<const CustomOp> op, std::vector<ValueId> inputs);

    const Tensor& value(ValueId v) const;
    size_t node_count() const { return nodes_.size(); }

    // Ownership transfer without a trace free event (boundary tensors).
    Tensor take(ValueId v);
    // Drop the executor's reference; the buffer is freed once no recorded
    // node still needs it for backward.
    void release(ValueId v);

    // Gradients of a scalar loss w.r.t. every requires_grad leaf
    // (zeros for unreached leaves). release_saved frees saved tensors as
    // nodes retire, for memory-metered runs.
    GradMap backward(ValueId loss, bool release_saved = false);
    GradMap backward_from(ValueId out, const Tensor& seed, bool release_saved = false);

private:
    enum class OpKind {
        Leaf, MatMul, Conv2d, Add, Sub, Mul, Relu, LeakyRelu, Exp, Scale,
        ReduceSum, ReduceMean, ReduceMax, Reshape, Custom
    };
    struct Node {
        Node() = default;
        OpKind kind = OpKind::Leaf;
        std::vector<ValueId> inputs;
        ValueId output;
        int stride = 0, pad = 0;
        float scalar = 0.0f;
        std::vector<int> axes;
        Shape prev_shape;
        std::shared_ptr<const CustomOp> op;
        std::vector<Tensor> stash;
        int64_t stash_bytes = 0;
    };
    struct Value {
        Tensor t;
        Shape shape;      // survives buffer release
        DType dtype = DType::F32;
        bool is_leaf = false;
        bool requires_grad = false;
        bool metered = false;
        bool existence = true;
        int save_refs = 0;
        bool freed = false;
        std::string tag;
    };

    ValueId new_value(Tensor t, bool metered, const std::string& tag);
    void save_ref(ValueId v);
    void unsave_ref(ValueId v);
    void maybe_free(ValueId v);
    ValueId record(OpKind kind, std::vector<ValueId> inputs, Tensor out, Node extra);
    const Tensor& val(ValueId v) const;
    void check_id(ValueId v) const;
    GradMap run_backward(ValueId out, Tensor seed, bool release_saved);
    void node_backward(const Node& n, const Tensor& dy, std::map<ValueId, Tensor>& acc);

    std::vector<Node> nodes_;
    std::vector<Value> values_;
    MemoryTrace* trace_ = nullptr;
};

// Max relative error between the tape gradient of f and central finite
// differences; error = |analytic - numeric| / max(1, |analytic|).
using TapeFn = std::function<ValueId(Tape&, ValueId)>;
double finite_diff_check(const TapeFn& f, const Tensor& x, double eps);

} // namespace simdet
