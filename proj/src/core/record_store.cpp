#include "record_store.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <mutex>

#include "error.hpp"
#include "text_util.hpp"

namespace valcon {

RecordStore::RecordStore(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.empty() || !std::filesystem::exists(path_)) return;
    std::ifstream in(path_, std::ios::binary);
    if (!in) fail(ErrorKind::config, "cannot read record log " + path_.string());
    std::string line;
    std::size_t line_number = 0;
    bool truncated_tail = false;
    while (std::getline(in, line)) {
        ++line_number;
        if (trim(line).empty()) continue;
        if (truncated_tail) {
            fail(ErrorKind::parse, path_.string() + ":" + std::to_string(line_number - 1) +
                                       ": malformed record");
        }
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            // Only an interrupted final write is tolerated.
            truncated_tail = true;
            continue;
        }
        const std::string key = record.value("cache_key", "");
        if (key.empty()) {
            fail(ErrorKind::parse, path_.string() + ":" + std::to_string(line_number) +
                                       ": record without cache_key");
        }
        if (index_.emplace(key, records_.size()).second) records_.push_back(std::move(record));
    }
    if (truncated_tail) {
        spdlog::warn("{}: ignoring truncated final record", path_.string());
        // Rewrite without the partial line so later appends stay well-formed.
        std::ofstream out(path_, std::ios::binary | std::ios::trunc);
        for (const auto& r : records_) out << r.dump() << "\n";
    }
}

std::optional<nlohmann::json> RecordStore::find(const std::string& key) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return std::optional<nlohmann::json>(std::in_place, records_[it->second]);
}

bool RecordStore::contains(const std::string& key) const {
    std::shared_lock lock(mutex_);
    return index_.contains(key);
}

bool RecordStore::append(const nlohmann::json& record) {
    const std::string key = record.value("cache_key", "");
    if (key.empty()) fail(ErrorKind::internal, "record without cache_key");
    std::unique_lock lock(mutex_);
    if (index_.contains(key)) return false;
    if (!path_.empty()) {
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
        std::ofstream out(path_, std::ios::binary | std::ios::app);
        if (!out) fail(ErrorKind::config, "cannot append to record log " + path_.string());
        out << record.dump() << "\n";
        out.flush();
    }
    index_.emplace(key, records_.size());
    records_.push_back(record);
    return true;
}

std::vector<nlohmann::json> RecordStore::records() const {
    std::shared_lock lock(mutex_);
    return records_;
}

std::vector<nlohmann::json> RecordStore::records_of_kind(std::string_view kind) const {
    std::shared_lock lock(mutex_);
    std::vector<nlohmann::json> out;
    for (const auto& r : records_) {
        if (r.value("kind", "") == kind) out.push_back(r);
    }
    return out;
}

std::size_t RecordStore::size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

}  // namespace valcon
