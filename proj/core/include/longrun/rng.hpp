#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace longrun {

/// Identifies one reproducible random stream: a 64-bit master seed plus a
/// path/stream index. Distinct pairs give statistically independent
/// sequences; the same pair replays the identical sequence regardless of
/// execution order or thread assignment.
struct RngStreamSpec {
    std::uint64_t master_seed = 0;
    std::uint64_t stream_id = 0;
};

/// Deterministic per-stream generator (splitmix64-expanded seed feeding
/// xoshiro256++), with hand-rolled Box-Muller normals so sequences do not
/// depend on standard-library distribution internals.
class RngStream {
public:
    explicit RngStream(RngStreamSpec spec);
    RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
        : RngStream(RngStreamSpec{master_seed, stream_id}) {}

    std::uint64_t next_u64();
    /// Uniform in [0,1) with 53 random bits.
    double uniform01();
    /// Standard normal.
    double gaussian();

    /// Matrix of iid N(0,1) entries, row-major fill order.
    Eigen::MatrixXd gaussian_matrix(int rows, int cols);
    Eigen::VectorXd gaussian_vector(int n);

private:
    std::uint64_t state_[4];
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace longrun
