#include "alamo/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>

namespace alamo {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kImageSuffix = "_image.mvol";
constexpr std::string_view kLabelSuffix = "_label.mvol";

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void require_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
}

}  // namespace

fs::path image_path(const fs::path& dir, const std::string& id) { return dir / (id + std::string(kImageSuffix)); }
fs::path label_path(const fs::path& dir, const std::string& id) { return dir / (id + std::string(kLabelSuffix)); }

std::vector<std::string> list_cases(const fs::path& dir) {
    require_dir(dir);
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (e.is_regular_file() && ends_with(name, kImageSuffix)) {
            ids.push_back(name.substr(0, name.size() - kImageSuffix.size()));
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<std::string> list_label_files(const fs::path& dir) {
    require_dir(dir);
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".mvol") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

Case load_case(const fs::path& dir, const std::string& id) {
    Case c{id, load_volume(image_path(dir, id)), load_labels(label_path(dir, id))};
    if (!(c.image.dims() == c.labels.dims())) {
        throw IoError("image and label dims differ for case " + id);
    }
    return c;
}

void save_case(const fs::path& dir, const Case& c) {
    fs::create_directories(dir);
    save_volume(c.image, image_path(dir, c.id));
    save_labels(c.labels, label_path(dir, c.id));
}

phantom::Split load_split(const fs::path& dir) {
    const fs::path p = dir / "split.json";
    std::ifstream is(p);
    if (!is) throw IoError("cannot open split file: " + p.string());
    try {
        return nlohmann::json::parse(is).get<phantom::Split>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed split file " + p.string() + ": " + e.what());
    }
}

void save_split(const fs::path& dir, const phantom::Split& split) {
    const fs::path p = dir / "split.json";
    std::ofstream os(p, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + p.string());
    os << nlohmann::json(split).dump(2) << '\n';
}

}  // namespace alamo
