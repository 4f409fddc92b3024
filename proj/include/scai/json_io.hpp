#pragma once

// JSON converters for the schema/noise/dataset configuration types, shared
// by the dataset manifest and the experiment config loader. Serialization
// writes full tables (not just names) so files remain self-describing.

#include "json.hpp"
#include "scai/dataset.hpp"

namespace scai {

using ordered_json = nlohmann::ordered_json;

ordered_json geometry_to_json(const HeatmapGeometry& g);
HeatmapGeometry geometry_from_json(const ordered_json& j);

ordered_json schema_to_json(const GroupSchema& s);
GroupSchema schema_from_json(const ordered_json& j);

ordered_json noise_to_json(const NoiseConfig& n);
// occlusion_rate may be one number (applied to every group) or a full array.
NoiseConfig noise_from_json(const ordered_json& j, int group_count);

ordered_json dataset_config_to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const ordered_json& j);

// Throws when j contains a key outside `allowed`; typo protection for every
// user-editable file.
void reject_unknown_keys(const ordered_json& j, const std::vector<std::string>& allowed,
                         const std::string& where);

}  // namespace scai
