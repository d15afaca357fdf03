#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "alamo/phantom.hpp"
#include "alamo/volume.hpp"

namespace alamo {

/// One paired image / ground-truth case.
struct Case {
    std::string id;
    Volume image;
    LabelMap labels;
};

/// On disk a dataset directory holds `<id>_image.mvol`, `<id>_label.mvol` and
/// optionally `split.json`, whose indices refer to the sorted id list.
[[nodiscard]] std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& id);
[[nodiscard]] std::filesystem::path label_path(const std::filesystem::path& dir, const std::string& id);

/// Sorted case ids found in `dir`; throws IoError if the directory is missing.
[[nodiscard]] std::vector<std::string> list_cases(const std::filesystem::path& dir);
/// Ids of `<id>.mvol` label files (prediction directories).
[[nodiscard]] std::vector<std::string> list_label_files(const std::filesystem::path& dir);

[[nodiscard]] Case load_case(const std::filesystem::path& dir, const std::string& id);
void save_case(const std::filesystem::path& dir, const Case& c);

[[nodiscard]] phantom::Split load_split(const std::filesystem::path& dir);
void save_split(const std::filesystem::path& dir, const phantom::Split& split);

}  // namespace alamo
