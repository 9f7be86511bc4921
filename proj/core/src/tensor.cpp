#include "spikeformer/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "spikeformer/error.hpp"

namespace spikeformer {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_sequence = 0;
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool enabled) { g_grad_enabled = enabled; }

std::uint64_t detail::next_sequence() { return ++g_sequence; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + to_string(shape) + " holds " +
                         std::to_string(numel(shape)) + " elements, got " +
                         std::to_string(values.size()));
  }
  storage_ = std::make_shared<detail::Storage<T>>();
  storage_->shape = std::move(shape);
  storage_->values = std::move(values);
  storage_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return storage_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(shape()));
  }
  return storage_->shape[axis];
}

template <typename T>
std::size_t Tensor<T>::size() const {
  return storage_ ? storage_->values.size() : 0;
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  return storage_->values;
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  return storage_->values;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + to_string(shape()));
  }
  return storage_->values[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw DimensionError("index rank mismatch for shape " + to_string(shape()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape()[axis]) {
      throw DimensionError("index out of range for shape " +
                           to_string(shape()));
    }
    flat = flat * shape()[axis] + i;
    ++axis;
  }
  return storage_->values[flat];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return storage_ && storage_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
  storage_->requires_grad = flag;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return storage_ && !storage_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return storage_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  return grad_accumulator();
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
}

template <typename T>
std::span<T> Tensor<T>::grad_accumulator() const {
  if (!storage_->requires_grad) return {};
  if (storage_->grad.size() != storage_->values.size()) {
    storage_->grad.assign(storage_->values.size(), T(0));
  }
  return storage_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(storage_->shape, storage_->values, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(storage_->shape, storage_->values, storage_->requires_grad);
}

template <typename T>
void Tensor<T>::backward() const {
  if (size() != 1) {
    throw DimensionError("backward() without seed needs a one-element tensor, got " +
                         to_string(shape()));
  }
  const T one(1);
  backward(std::span<const T>(&one, 1));
}

template <typename T>
void Tensor<T>::backward(std::span<const T> seed) const {
  if (seed.size() != size()) {
    throw DimensionError("backward seed size does not match " +
                         to_string(shape()));
  }
  if (!requires_grad()) return;
  auto root_grad = grad_accumulator();
  for (std::size_t i = 0; i < seed.size(); ++i) root_grad[i] += seed[i];

  // Gather the tape reachable from the root, then replay it newest-first.
  std::vector<std::shared_ptr<detail::TapeEntry<T>>> tape;
  std::unordered_set<const detail::TapeEntry<T>*> seen;
  std::vector<std::shared_ptr<detail::TapeEntry<T>>> stack;
  if (storage_->producer) stack.push_back(storage_->producer);
  while (!stack.empty()) {
    auto entry = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(entry.get()).second) continue;
    for (const auto& input : entry->inputs) {
      if (input->producer && !seen.count(input->producer.get())) {
        stack.push_back(input->producer);
      }
    }
    tape.push_back(std::move(entry));
  }
  std::sort(tape.begin(), tape.end(), [](const auto& a, const auto& b) {
    return a->sequence > b->sequence;
  });

  for (auto& entry : tape) {
    auto output = entry->output.lock();
    if (output && !output->grad.empty() && entry->backward) {
      entry->backward(std::span<const T>(output->grad));
    }
  }
  // Release only after the full replay: an intermediate may be kept alive
  // solely by a later entry's input list.
  for (auto& entry : tape) {
    auto output = entry->output.lock();
    entry->backward = nullptr;
    entry->inputs.clear();
    if (output) output->producer.reset();
  }
}

template <typename T>
Tensor<T> Tensor<T>::record(Shape shape, std::vector<T> values,
                            std::initializer_list<Tensor> inputs,
                            const char* op, BackwardFn fn) {
  return record(std::move(shape), std::move(values),
                std::vector<Tensor>(inputs), op, std::move(fn));
}

template <typename T>
Tensor<T> Tensor<T>::record(Shape shape, std::vector<T> values,
                            const std::vector<Tensor>& inputs, const char* op,
                            BackwardFn fn) {
  Tensor result(std::move(shape), std::move(values), false);
  if (!GradMode::enabled()) return result;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return result;
  auto entry = std::make_shared<detail::TapeEntry<T>>();
  entry->sequence = detail::next_sequence();
  entry->op = op;
  entry->output = result.storage_;
  entry->inputs.reserve(inputs.size());
  for (const auto& t : inputs) entry->inputs.push_back(t.storage_);
  entry->backward = std::move(fn);
  result.storage_->requires_grad = true;
  result.storage_->producer = std::move(entry);
  return result;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace spikeformer
