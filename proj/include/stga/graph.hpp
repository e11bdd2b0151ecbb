#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

namespace stga {

/// Lane-cell lattice over a road segment: one node per (lane, cell), flat
/// index i = lane * num_cells + cell. Longitudinal edges join consecutive
/// cells of a lane; lateral edges join the same cell of adjacent lanes.
struct LatticeGraph {
    int num_lanes = 0;
    int num_cells = 0;
    std::vector<std::pair<int, int>> nodes;  // (lane, cell), flat order
    Eigen::MatrixXd adjacency;               // N x N of {0,1}, symmetric, zero diagonal

    int num_nodes() const { return num_lanes * num_cells; }
    int node_index(int lane, int cell) const;
    std::pair<int, int> node_coords(int index) const;
};

/// Spectral quantities derived from a graph: D, L = I - D^{-1/2} A D^{-1/2},
/// its largest eigenvalue and the rescaling L~ = (2/lambda_max) L - I.
struct SpectralOperators {
    Eigen::VectorXd degree;  // diagonal of D
    Eigen::MatrixXd laplacian;
    double lambda_max = 0.0;
    Eigen::MatrixXd scaled_laplacian;
};

struct ChebyshevFilter {
    std::vector<double> coefficients;  // theta, one per polynomial order
    int order() const { return static_cast<int>(coefficients.size()); }
};

LatticeGraph build_lattice_graph(int num_lanes, int num_cells, bool lateral_edges = true);

/// L = I - D^{-1/2} A D^{-1/2}; rows of isolated nodes equal the identity row
/// ((D^{-1/2})_ii := 0 when the degree is zero).
Eigen::MatrixXd normalized_laplacian(const Eigen::MatrixXd& adjacency);
Eigen::MatrixXd normalized_laplacian(const LatticeGraph& graph);

/// Largest eigenvalue of a symmetric matrix by power iteration (Rayleigh
/// quotient stopping rule). Throws ConvergenceError with the last estimate
/// if the iteration cap is hit.
double max_eigenvalue(const Eigen::MatrixXd& laplacian, double tol = 1e-9, int max_iter = 10000);

Eigen::MatrixXd scaled_laplacian(const Eigen::MatrixXd& laplacian, double lambda_max);

SpectralOperators spectral_operators(const LatticeGraph& graph);

/// sum_k theta_k T_k(L~) x via the three-term recursion on vectors; never
/// materializes T_k(L~) as a matrix.
Eigen::VectorXd chebyshev_apply(const Eigen::MatrixXd& scaled_lap, const Eigen::VectorXd& x,
                                const std::vector<double>& theta);
Eigen::VectorXd chebyshev_apply(const Eigen::MatrixXd& scaled_lap, const Eigen::VectorXd& x,
                                const ChebyshevFilter& filter);

/// Nodes within `hops` BFS steps of `node`, excluding `node`, ascending order.
std::vector<int> neighbors_within(const LatticeGraph& graph, int node, int hops);

/// BFS hop distance between two nodes (-1 if unreachable).
int hop_distance(const LatticeGraph& graph, int from, int to);

/// Edge list CSV with header `src,dst`, each undirected edge once (src < dst).
void write_edge_list_csv(const LatticeGraph& graph, const std::string& path);

}  // namespace stga
