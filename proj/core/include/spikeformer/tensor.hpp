#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace spikeformer {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Storage;

// One executed operation on the gradient tape. `backward` receives the
// gradient of the node's output and accumulates into its inputs.
template <typename T>
struct TapeEntry {
  std::uint64_t sequence = 0;
  const char* op = "";
  std::weak_ptr<Storage<T>> output;
  std::vector<std::shared_ptr<Storage<T>>> inputs;
  std::function<void(std::span<const T>)> backward;
};

template <typename T>
struct Storage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<TapeEntry<T>> producer;
};

std::uint64_t next_sequence();

}  // namespace detail

// Thread-local switch; when disabled no tape entries are recorded.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major tensor handle. Copies share storage, like most autograd
// libraries; use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using BackwardFn = std::function<void(std::span<const T>)>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const T> values() const;
  // Direct write access. Only meaningful on leaves (initialisation,
  // optimiser updates); writing into a recorded intermediate corrupts its
  // backward pass.
  std::span<T> mutable_values();
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  // Zero-initialised gradient buffer of this tensor, allocated on first use.
  // Empty when the tensor does not require grad.
  std::span<T> grad_accumulator() const;

  Tensor detach() const;
  Tensor clone() const;

  // Seeds d(self)/d(self) = 1 (self must hold one element) and replays the
  // tape in reverse execution order.
  void backward() const;
  void backward(std::span<const T> seed) const;

  const std::shared_ptr<detail::Storage<T>>& storage() const { return storage_; }

  // Builds an op result and, when any input requires grad and grad mode is
  // on, records a tape entry whose backward rule is `fn`.
  static Tensor record(Shape shape, std::vector<T> values,
                       std::initializer_list<Tensor> inputs, const char* op,
                       BackwardFn fn);
  static Tensor record(Shape shape, std::vector<T> values,
                       const std::vector<Tensor>& inputs, const char* op,
                       BackwardFn fn);

 private:
  explicit Tensor(std::shared_ptr<detail::Storage<T>> storage)
      : storage_(std::move(storage)) {}

  std::shared_ptr<detail::Storage<T>> storage_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace spikeformer
