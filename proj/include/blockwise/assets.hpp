#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>

#include "json.hpp"

#include "blockwise/common.hpp"

namespace blockwise {

/// Versioned external assets (prompt templates, JSON schemas, rubric text)
/// referenced by id. An id is the path under the asset root without the
/// extension, e.g. "prompts/score_h1.strict_grammarian.v1". Keeping prompts
/// out of code means a run's phase log pins exactly which asset produced
/// which output.
class AssetStore {
public:
    explicit AssetStore(std::filesystem::path root) : root_(std::move(root)) {
        if (!std::filesystem::is_directory(root_))
            throw IoError("asset directory not found: " + root_.string());
    }

    const std::string& text(const std::string& id) const {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = text_cache_.find(id);
        if (it != text_cache_.end()) return it->second;
        std::ifstream in(root_ / (id + ".txt"));
        if (!in) throw IoError("asset not found: " + id + " under " + root_.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        return text_cache_.emplace(id, buf.str()).first->second;
    }

    const nlohmann::json& schema(const std::string& id) const {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = json_cache_.find(id);
        if (it != json_cache_.end()) return it->second;
        std::ifstream in(root_ / (id + ".json"));
        if (!in) throw IoError("asset not found: " + id + " under " + root_.string());
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("asset " + id + ": " + e.what());
        }
        return json_cache_.emplace(id, std::move(doc)).first->second;
    }

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
    mutable std::mutex mutex_;
    mutable std::map<std::string, std::string> text_cache_;
    mutable std::map<std::string, nlohmann::json> json_cache_;
};

/// {{key}} substitution. Unresolved placeholders are an error so prompt/asset
/// typos fail loudly instead of reaching a backend.
inline std::string render_template(const std::string& tmpl,
                                   const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    size_t pos = 0;
    while (pos < tmpl.size()) {
        size_t open = tmpl.find("{{", pos);
        if (open == std::string::npos) {
            out.append(tmpl, pos, std::string::npos);
            break;
        }
        out.append(tmpl, pos, open - pos);
        size_t close = tmpl.find("}}", open + 2);
        if (close == std::string::npos)
            throw FormatError("template: unterminated placeholder near '" +
                              tmpl.substr(open, 20) + "'");
        std::string key = trim(tmpl.substr(open + 2, close - open - 2));
        auto it = vars.find(key);
        if (it == vars.end())
            throw FormatError("template: no value for placeholder '" + key + "'");
        out += it->second;
        pos = close + 2;
    }
    return out;
}

}  // namespace blockwise
