#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace valcon {

// Append-only, content-addressed log with one JSON record per line. Every
// record carries "kind" and "cache_key"; the first record for a key wins.
// Writes are serialized; reads may run concurrently.
class RecordStore {
public:
    // An empty path keeps records in memory only.
    explicit RecordStore(std::filesystem::path path = {});

    std::optional<nlohmann::json> find(const std::string& key) const;
    bool contains(const std::string& key) const;
    // Returns false (and writes nothing) when the key is already stored.
    bool append(const nlohmann::json& record);

    std::vector<nlohmann::json> records() const;
    std::vector<nlohmann::json> records_of_kind(std::string_view kind) const;
    std::size_t size() const;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    mutable std::shared_mutex mutex_;
    std::vector<nlohmann::json> records_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace valcon
