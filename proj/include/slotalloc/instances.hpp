#pragma once

#include "slotalloc/model.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace slotalloc {

/// Schema version written to and accepted from instance files.
inline constexpr const char* kInstanceSchemaVersion = "1";

/// Three-queue test instance (FU_1, OR_0, OR_1).
Instance build_small();
/// Five-queue test instance (FA_2, FU_4, OR_2, OR_4, DA_3).
Instance build_large();
/// Nine-queue case-study instance with a Start row.
Instance build_smk();

/// Built-in instance by name ("small", "large", "smk").
Instance builtin_instance(std::string_view name);
/// Built-in name, or else a path to an instance file.
Instance resolve_instance(const std::string& ref, std::vector<std::string>* warnings = nullptr);

/**
 * Parses an instance document. Schema problems raise SchemaError naming
 * the offending field. A missing Exit column is inferred as the row
 * remainder and reported through `warnings`.
 */
Instance parse_instance(std::string_view text, std::vector<std::string>* warnings = nullptr);
std::string serialize_instance(const Instance& inst);

Instance load_instance(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
void save_instance(const Instance& inst, const std::filesystem::path& path);

} // namespace slotalloc
