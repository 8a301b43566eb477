#pragma once

/**
 * @file pde_solver.hpp
 * @brief Finite-difference solvers for the four backward Cauchy problems.
 *
 * On [0,T] x [0,1] with beta(p) = ((mu1-mu2)/sigma) p (1-p):
 *
 *   a  :  d_t a + (theta-r)^2/(sigma^2 gamma) - beta (theta-r) d_p a / sigma
 *              + 1/2 beta^2 d_pp a = 0,                     a(T,p) = 0
 *   A2 :  d_t A2 + 1/2 beta^2 d_pp A2 + R(p, d_p a2) = 0,   A2(T,p) = 0
 *   A1 :  d_t A1 + 1/2 beta^2 d_pp A1 + R1(p, d_p a1) + c = 0,  A1(T,p) = 0
 *
 * where R is the follower's myopic gain net of the variance penalty and c is
 * the constant entropy gain of the leader's Gaussian policy. The diffusion
 * degenerates at p in {0,1}; the boundary columns carry the exact traces
 * obtained by integrating the beta = 0 equation in time.
 */

#include "stackelberg/market_model.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace stackelberg {

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The explicit scheme upwinds the advection and is rejected with NumericalError
/// when dt exceeds its positivity limit; Crank-Nicolson is unconditionally stable.
enum class Scheme { explicit_euler, crank_nicolson };

struct PdeGridSpec {
    int n_time = 512;   ///< time levels including t = 0 and t = T
    int n_space = 256;  ///< interior p nodes; two boundary nodes are added
    Scheme scheme = Scheme::crank_nicolson;

    void validate() const;

    double dt(double T) const { return T / static_cast<double>(n_time - 1); }
    double dp() const { return 1.0 / static_cast<double>(n_space + 1); }
    int n_nodes() const { return n_space + 2; }

    bool operator==(const PdeGridSpec&) const = default;
};

enum class SurfaceKind { a1, a2, A1, A2 };

std::string to_string(SurfaceKind kind);
std::string to_string(Scheme scheme);
Scheme scheme_from_string(const std::string& name);

enum class Field { value, dp };

/**
 * One solved surface on the (time level, p node) grid. Row n_time-1 is t = T.
 * Columns 0 and n_space+1 are the boundary nodes p = 0 and p = 1.
 */
class ValueSurface {
public:
    ValueSurface(SurfaceKind kind, const PdeGridSpec& grid, const ModelParams& params,
                 std::vector<double> values, std::vector<double> dp_values);

    SurfaceKind kind() const noexcept { return kind_; }
    const PdeGridSpec& grid() const noexcept { return grid_; }
    const ModelParams& params() const noexcept { return params_; }
    bool has_dp() const noexcept { return !dp_values_.empty(); }

    int n_time() const noexcept { return grid_.n_time; }
    int n_nodes() const noexcept { return grid_.n_space + 2; }
    double time(int level) const noexcept { return level * dt_; }
    double node(int j) const noexcept { return j * dp_; }

    double value(int level, int j) const { return values_[index(level, j)]; }
    double dp(int level, int j) const { return dp_values_[index(level, j)]; }
    std::span<const double> row(int level) const;
    std::span<const double> dp_row(int level) const;

    /**
     * Bilinear interpolation on the grid; exact at nodes. Throws DomainError
     * outside [0,T] x [0,1] and for Field::dp on an A-kind surface.
     */
    double interpolate(double t, double p, Field which) const;

    /// Same as interpolate() without range checks; t and p must be in range.
    double interpolate_unchecked(double t, double p, Field which) const noexcept;

    /// CSV with a header of p nodes and one row per time level (first column t).
    void write_csv(const std::filesystem::path& dir) const;
    std::string csv_filename() const;

private:
    std::size_t index(int level, int j) const noexcept {
        return static_cast<std::size_t>(level) * static_cast<std::size_t>(n_nodes()) +
               static_cast<std::size_t>(j);
    }

    SurfaceKind kind_;
    PdeGridSpec grid_;
    ModelParams params_;
    double dt_;
    double dp_;
    std::vector<double> values_;
    std::vector<double> dp_values_;
};

/// Anticipated portfolio gains a_i for risk aversion gamma; kind is a1 or a2.
ValueSurface solve_a(const Market& market, double gamma, const PdeGridSpec& grid,
                     SurfaceKind kind);
ValueSurface solve_a1(const Market& market, const PdeGridSpec& grid);
ValueSurface solve_a2(const Market& market, const PdeGridSpec& grid);

/**
 * The source term of the A-equations. With
 *   m = (theta-r)/(sigma^2 gamma) - beta da / sigma,
 *   R = (theta-r) m - gamma/2 sigma^2 m^2 - gamma/2 beta^2 da^2 - gamma sigma beta da m.
 * Depends on t only through da. gamma = gamma2 gives the follower's source.
 */
double source_R(const Market& market, double gamma, double p, double da);

/// Entropy gain rate of the leader's equilibrium policy,
/// (lambda0/2) log(2 pi lambda0 / (gamma1 sigma^2 chi^2)). Requires lambda0 > 0.
double entropy_source_constant(const Market& market);

ValueSurface solve_A2(const Market& market, const ValueSurface& a2, const PdeGridSpec& grid);
ValueSurface solve_A1(const Market& market, const ValueSurface& a1, const PdeGridSpec& grid);

/// The four equilibrium surfaces solved on one grid.
struct EquilibriumSurfaces {
    ValueSurface a1;
    ValueSurface a2;
    ValueSurface A1;
    ValueSurface A2;
};

EquilibriumSurfaces solve_all(const Market& market, const PdeGridSpec& grid);

}  // namespace stackelberg
