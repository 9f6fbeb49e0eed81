#include "wsss/rng.hpp"

#include <cmath>
#include <sstream>

namespace wsss {

std::string Rng::state_string() const {
    std::ostringstream os;
    os << eng_ << " " << (has_spare_ ? 1 : 0) << " " << spare_;
    return os.str();
}

void Rng::restore_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    int flag = 0;
    is >> flag >> spare_;
    has_spare_ = flag != 0;
}

Tensor rand_uniform(Rng& rng, std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Tensor rand_normal(Rng& rng, std::vector<int> shape, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
    return t;
}

void shuffle_indices(std::vector<int>& v, Rng& rng) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
        int j = rng.uniform_int(0, i);
        std::swap(v[i], v[j]);
    }
}

}  // namespace wsss
