#include "tedio/autograd.hpp"

#include <atomic>

namespace tedio {

namespace {
std::atomic<uint64_t> g_epoch{1};
}

template <class T>
uint64_t TapeT<T>::next_epoch() {
    return g_epoch.fetch_add(1);
}

template <class T>
thread_local TapeT<T>* TapeT<T>::active_ = nullptr;

template class TapeT<float>;
template class TapeT<double>;

}  // namespace tedio
