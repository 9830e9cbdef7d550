#pragma once

#include "cdpg/categorical.hpp"
#include "cdpg/evaluation.hpp"
#include "cdpg/mdp.hpp"

#include <string>

namespace cdpg {

// Distribution: {"z_min": f, "z_max": f, "n_atoms": k, "probs": [f, ...]}
std::string distribution_to_json(const CategoricalDistribution& dist, int indent = -1);
CategoricalDistribution distribution_from_json(const std::string& text);

// Table: {"s:a": <distribution>, ...}
std::string table_to_json(const ReturnDistributionTable& table, int indent = -1);
ReturnDistributionTable table_from_json(const std::string& text);

// MDP: {"n_states", "n_actions", "gamma", "terminals", "transition": [s][a][s'],
//       "cost": [s][a] or [s][a][s']}. The 2-D cost form is written whenever it is exact.
std::string mdp_to_json(const TabularMdp& mdp, int indent = -1);
TabularMdp mdp_from_json(const std::string& text);

// Policy: {"n_states": k, "n_actions": k, "theta": [[...], ...]}
std::string policy_to_json(const SoftmaxPolicy& policy, int indent = -1);
SoftmaxPolicy policy_from_json(const std::string& text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace cdpg
