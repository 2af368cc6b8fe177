#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lpvctl {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using MatrixXc = Eigen::MatrixXcd;

/// Thrown when an input violates a documented invariant. `field` names the
/// offending quantity so callers can report it verbatim.
class ValidationError : public std::invalid_argument {
public:
    ValidationError(std::string field, const std::string& reason)
        : std::invalid_argument(field + ": " + reason), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Scalar scheduling domain: ordered grid on [rho_min, rho_max] with the
/// rate set [-rate_bound, +rate_bound]. A single grid point is the LTI case.
class ParameterDomain {
public:
    ParameterDomain() : ParameterDomain(std::vector<double>{0.0}, 0.0) {}
    ParameterDomain(std::vector<double> grid, double rate_bound);

    static ParameterDomain uniform(double rho_min, double rho_max, int points, double rate_bound);
    static ParameterDomain lti(double rho = 0.0) { return ParameterDomain({rho}, 0.0); }

    const std::vector<double>& grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return grid_.size(); }
    double rho_min() const noexcept { return grid_.front(); }
    double rho_max() const noexcept { return grid_.back(); }
    double rate_bound() const noexcept { return rate_bound_; }
    bool is_lti() const noexcept { return grid_.size() == 1; }

    /// Rate vertices of the (scalar) rate box; {0} when the rate bound is zero.
    std::vector<double> rate_vertices() const;

    double clamp(double rho) const;

    bool operator==(const ParameterDomain& other) const = default;

private:
    std::vector<double> grid_;
    double rate_bound_ = 0.0;
};

/// Continuous-time state-space realization (A, B, C, D).
struct StateSpace {
    MatrixXd A, B, C, D;

    StateSpace() = default;
    StateSpace(MatrixXd a, MatrixXd b, MatrixXd c, MatrixXd d);

    static StateSpace gain(const MatrixXd& d);

    Eigen::Index states() const noexcept { return A.rows(); }
    Eigen::Index inputs() const noexcept { return B.cols(); }
    Eigen::Index outputs() const noexcept { return C.rows(); }

    /// Throws ValidationError when the four blocks are not conformable.
    void validate() const;

    /// Restrict to a subset of inputs/outputs (contiguous ranges).
    StateSpace subsystem(Eigen::Index out_begin, Eigen::Index out_count, Eigen::Index in_begin,
                         Eigen::Index in_count) const;

    bool is_hurwitz(double margin = 0.0) const;
};

/// Named contiguous group of input or output channels.
struct ChannelGroup {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
    bool operator==(const ChannelGroup&) const = default;
};

struct IoLabels {
    std::vector<ChannelGroup> inputs;
    std::vector<ChannelGroup> outputs;
    bool operator==(const IoLabels&) const = default;
};

/// State-space data sampled on a parameter grid; one realization per point.
class GriddedSystem {
public:
    GriddedSystem() = default;
    GriddedSystem(ParameterDomain domain, std::vector<StateSpace> data, IoLabels labels = {});

    static GriddedSystem lti(const StateSpace& sys) { return GriddedSystem(ParameterDomain::lti(), {sys}); }

    const ParameterDomain& domain() const noexcept { return domain_; }
    const std::vector<StateSpace>& data() const noexcept { return data_; }
    const StateSpace& at(std::size_t k) const { return data_.at(k); }
    const IoLabels& labels() const noexcept { return labels_; }
    std::size_t size() const noexcept { return data_.size(); }

    Eigen::Index states() const { return data_.front().states(); }
    Eigen::Index inputs() const { return data_.front().inputs(); }
    Eigen::Index outputs() const { return data_.front().outputs(); }

    /// Largest entrywise change of [A B; C D] between neighbouring grid points,
    /// relative to the largest entry magnitude over the grid.
    double max_adjacent_jump() const;

private:
    ParameterDomain domain_;
    std::vector<StateSpace> data_;
    IoLabels labels_;
};

/// Entrywise linear interpolation; rho is clamped to the domain first, so the
/// system behaves as LTI outside it.
StateSpace eval_at(const GriddedSystem& sys, double rho);

// Pointwise interconnections. Inputs of `series` feed sys1, whose outputs feed
// sys2 (y = sys2 * sys1 * u). Domains must match or one side must be LTI.
StateSpace series(const StateSpace& sys1, const StateSpace& sys2);
GriddedSystem series(const GriddedSystem& sys1, const GriddedSystem& sys2);

/// Closed loop of `plant` with `ctrl` in the feedback path, u = r + sign * K y.
/// sign = -1 is standard negative feedback. Output is the plant output.
StateSpace feedback(const StateSpace& plant, const StateSpace& ctrl, int sign = -1);
GriddedSystem feedback(const GriddedSystem& plant, const GriddedSystem& ctrl, int sign = -1);

/// Lower LFT F_l(G, K): the last K.outputs() inputs and last K.inputs()
/// outputs of G are closed through K.
StateSpace lft_lower(const StateSpace& gen_plant, const StateSpace& ctrl);
GriddedSystem lft_lower(const GriddedSystem& gen_plant, const GriddedSystem& ctrl);

StateSpace parallel_sum(const StateSpace& s1, const StateSpace& s2);
StateSpace append(const StateSpace& s1, const StateSpace& s2);

/// Frequency response sample; `finite` is false when iw is a pole of the system.
struct FrequencySample {
    double omega = 0.0;
    MatrixXc value;
    bool finite = true;
};

std::vector<FrequencySample> freq_response(const StateSpace& sys, const std::vector<double>& omegas);
MatrixXc eval_tf(const StateSpace& sys, std::complex<double> s);

/// Logarithmically spaced points, inclusive of both ends.
std::vector<double> logspace(double lo_exp, double hi_exp, int count);

/// Diagonal state scaling T (as a vector of positive entries) that balances
/// the rows and columns of [A B; C 0]; applied as A -> T^-1 A T.
VectorXd balancing_scale(const std::vector<const StateSpace*>& systems);
StateSpace apply_state_scale(const StateSpace& sys, const VectorXd& t);

}  // namespace lpvctl
