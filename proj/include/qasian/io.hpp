#pragma once

#include "qasian/circuits.hpp"
#include "qasian/extraction.hpp"
#include "qasian/grid.hpp"
#include "qasian/inversion.hpp"
#include "qasian/oracle.hpp"

#include <json.hpp>

#include <string>

namespace qasian {

using json = nlohmann::ordered_json;

// shortest round-trip decimal form
std::string fmt(double v);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);
void ensure_dir(const std::string& dir);

json to_json(const MarketParams& p);
MarketParams params_from_json(const json& j, MarketParams base = {});
json to_json(const GridSpec& g);
json to_json(const GridConfig& g);
GridConfig grid_config_from_json(const json& j, GridConfig base = {});
json to_json(const PreconditionReport& r);
json to_json(const AmplitudeEstimator& e);
AmplitudeEstimator estimator_from_json(const json& j, AmplitudeEstimator base = {});
json to_json(const TableIIAccount& a);

// row, col, re, im for nonzero entries
void write_matrix_csv(const std::string& path, const CMat& m, double tol = 0.0);
// (tau, eta, psi) lattice
void write_lattice_csv(const std::string& path, const GridSpec& g, const RMat& psi);
void write_nodes_csv(const std::string& path, const Extraction& ex);
// psi on an n_eta x n_tau evaluation grid spanning the extraction window
void write_surface_csv(const std::string& path, const Extraction& ex, int n_eta_pts, int n_tau_pts);
void write_quotes_csv(const std::string& path, const std::vector<PriceQuote>& q);

json encoding_descriptor(const BlockEncoding& be, const TableIIAccount& anc, const GridSpec& g);

}  // namespace qasian
