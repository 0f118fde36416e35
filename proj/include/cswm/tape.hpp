#pragma once

// Reverse-mode tape. Ops record a backward closure when any input requires
// grad; backward() replays them in reverse and consumes the tape.

#include <functional>
#include <vector>

#include "cswm/common.hpp"
#include "cswm/tensor.hpp"

namespace cswm {

class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    CSWM_CHECK(!consumed_, "tape already consumed by backward()");
    nodes_.push_back(std::move(backward_fn));
  }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds loss.grad with 1 and replays recorded closures newest-first.
  // The tape is single-use; a second backward() is a contract violation.
  void backward(Tensor& loss) {
    CSWM_CHECK(!consumed_, "backward() called twice on the same tape");
    CSWM_CHECK(loss.numel() == 1, "backward() requires a scalar loss, got shape ",
               shape_str(loss.shape()));
    consumed_ = true;
    loss.grad()[0] += 1.0f;
    // Closures are destroyed as soon as they run so captured activations are
    // released progressively; this caps peak memory during backward.
    for (size_t i = nodes_.size(); i > 0; --i) {
      nodes_[i - 1]();
      nodes_[i - 1] = nullptr;
    }
    nodes_.clear();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

}  // namespace cswm
