#include "tgdm/common.hpp"

namespace tgdm {

uint64_t mix_seed(uint64_t base, uint64_t a, uint64_t b) {
    uint64_t z = base ^ (a * 0x9e3779b97f4a7c15ull) ^ (b * 0xda942042e4dd58b5ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace tgdm
