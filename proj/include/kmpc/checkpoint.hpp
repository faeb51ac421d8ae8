#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "kmpc/dense_net.hpp"
#include "kmpc/types.hpp"

namespace kmpc {

/// Matrix <-> JSON as {rows, cols, data(row-major)}. nlohmann emits doubles
/// at round-trip precision, so a reloaded checkpoint reproduces predictions
/// bit for bit.
nlohmann::json mat_to_json(const Mat& m);
Mat mat_from_json(const nlohmann::json& j);

nlohmann::json net_to_json(const DenseNet& net);
DenseNet net_from_json(const nlohmann::json& j);

/// Write-temp-then-rename so readers never observe a partial document.
void write_json_atomic(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace kmpc
